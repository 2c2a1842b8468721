#include "civic/labels.hpp"

#include <cctype>

namespace civic {

char level_letter(Level level) noexcept { return static_cast<char>('A' + index_of(level)); }

std::optional<Level> parse_level(std::string_view text) noexcept {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
    if (text.size() != 1) return std::nullopt;
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text.front())));
    if (c < 'A' || c > 'E') return std::nullopt;
    return static_cast<Level>(c - 'A');
}

std::size_t LabelVector::count() const noexcept {
    std::size_t n = 0;
    for (bool b : bits_) n += b ? 1 : 0;
    return n;
}

std::string LabelVector::to_string() const {
    std::string out;
    for (Level l : kAllLevels) {
        if (!test(l)) continue;
        if (!out.empty()) out += ',';
        out += level_letter(l);
    }
    return out;
}

}  // namespace civic
