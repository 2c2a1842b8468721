#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "civic/log.hpp"
#include "civic/neural.hpp"
#include "civic/tokenizer.hpp"

namespace civic::testing {

inline neural::ModelConfig tiny_config(int vocab_size = 30) {
    neural::ModelConfig c;
    c.num_blocks = 2;
    c.context_width = 12;
    c.embed_dim = 8;
    c.hidden_dim = 12;
    c.num_heads = 2;
    c.vocab_size = vocab_size;
    return c;
}

/// Sequence of content ids wrapped with bos/eos, optionally followed by pads.
inline tokenizer::TokenSequence make_seq(std::vector<tokenizer::TokenId> content, std::size_t pads = 0) {
    const tokenizer::SpecialIds sp;
    tokenizer::TokenSequence s;
    s.ids.push_back(sp.bos);
    s.ids.insert(s.ids.end(), content.begin(), content.end());
    s.ids.push_back(sp.eos);
    s.attention_length = s.ids.size();
    s.ids.insert(s.ids.end(), pads, sp.pad);
    return s;
}

/// Captures warnings for the lifetime of the object.
class WarningCapture {
public:
    WarningCapture() : previous_(log::set_warning_sink([this](const std::string& m) { messages.push_back(m); })) {}
    ~WarningCapture() { log::set_warning_sink(previous_); }
    WarningCapture(const WarningCapture&) = delete;
    WarningCapture& operator=(const WarningCapture&) = delete;

    std::vector<std::string> messages;

private:
    log::Sink previous_;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / ("civic_test_" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& f) const { return path_ / f; }

private:
    std::filesystem::path path_;
};

}  // namespace civic::testing
