#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>

namespace civic {

/// Number of clinical evidence levels (A through E).
inline constexpr std::size_t kNumLevels = 5;

enum class Level : std::uint8_t { A = 0, B, C, D, E };

inline constexpr std::array<Level, kNumLevels> kAllLevels{Level::A, Level::B, Level::C, Level::D, Level::E};

constexpr std::size_t index_of(Level level) noexcept { return static_cast<std::size_t>(level); }

char level_letter(Level level) noexcept;

/// Accepts "A".."E" in either case, with surrounding whitespace.
std::optional<Level> parse_level(std::string_view text) noexcept;

/// Five boolean slots, one per evidence level.
class LabelVector {
public:
    LabelVector() = default;

    static LabelVector of(std::initializer_list<Level> levels) {
        LabelVector v;
        for (Level l : levels) v.set(l);
        return v;
    }

    bool test(Level level) const noexcept { return bits_[index_of(level)]; }
    bool test(std::size_t index) const noexcept { return bits_[index]; }
    void set(Level level, bool value = true) noexcept { bits_[index_of(level)] = value; }
    void set(std::size_t index, bool value = true) noexcept { bits_[index] = value; }

    std::size_t count() const noexcept;
    bool any() const noexcept { return count() > 0; }

    LabelVector& operator|=(const LabelVector& other) noexcept {
        for (std::size_t i = 0; i < kNumLevels; ++i) bits_[i] = bits_[i] || other.bits_[i];
        return *this;
    }

    friend bool operator==(const LabelVector&, const LabelVector&) = default;

    /// Comma-separated letters in level order, e.g. "C,D". Empty when no slot is set.
    std::string to_string() const;

private:
    std::array<bool, kNumLevels> bits_{};
};

}  // namespace civic
