#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace kwmatch::utf8 {

/// Length in bytes of the sequence introduced by `lead`. Invalid lead bytes
/// are treated as single-byte sequences so decoding never stalls.
inline std::size_t sequence_length(unsigned char lead) noexcept {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

/// Decodes the code point starting at `pos`; returns it with its byte length.
/// Malformed input decodes byte-wise as U+FFFD.
inline std::pair<char32_t, std::size_t> decode(std::string_view s, std::size_t pos) noexcept {
    const auto lead = static_cast<unsigned char>(s[pos]);
    std::size_t len = sequence_length(lead);
    if (pos + len > s.size()) return {char32_t{0xFFFD}, 1};
    if (len == 1) return {lead < 0x80 ? char32_t(lead) : char32_t{0xFFFD}, 1};
    char32_t cp = lead & (0xFF >> (len + 1));
    for (std::size_t i = 1; i < len; ++i) {
        const auto c = static_cast<unsigned char>(s[pos + i]);
        if ((c >> 6) != 0x2) return {char32_t{0xFFFD}, 1};
        cp = (cp << 6) | (c & 0x3F);
    }
    return {cp, len};
}

inline bool is_space(char32_t c) noexcept {
    switch (c) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029: case 0x202F:
    case 0x205F: case 0x3000:
        return true;
    default:
        return c >= 0x2000 && c <= 0x200A;
    }
}

/// Unicode punctuation (general category P*) over the blocks that occur in
/// Latin and CJK question text, plus the whole fullwidth ASCII punctuation range.
inline bool is_punct(char32_t c) noexcept {
    if (c < 0x80) {
        switch (c) {
        case U'!': case U'"': case U'#': case U'%': case U'&': case U'\'': case U'(':
        case U')': case U'*': case U',': case U'-': case U'.': case U'/': case U':':
        case U';': case U'?': case U'@': case U'[': case U'\\': case U']': case U'_':
        case U'{': case U'}':
            return true;
        default:
            return false;
        }
    }
    struct Range { char32_t lo, hi; };
    static constexpr Range ranges[] = {
        {0x00A1, 0x00A1}, {0x00A7, 0x00A7}, {0x00AB, 0x00AB}, {0x00B6, 0x00B7},
        {0x00BB, 0x00BB}, {0x00BF, 0x00BF}, {0x2010, 0x2027}, {0x2030, 0x2043},
        {0x2045, 0x2051}, {0x2053, 0x205E}, {0x3001, 0x3003}, {0x3008, 0x3011},
        {0x3014, 0x301F}, {0x3030, 0x3030}, {0x303D, 0x303D}, {0x30A0, 0x30A0},
        {0x30FB, 0x30FB}, {0xFE10, 0xFE19}, {0xFE30, 0xFE52}, {0xFE54, 0xFE61},
        {0xFE63, 0xFE63}, {0xFE68, 0xFE68}, {0xFE6A, 0xFE6B}, {0xFF01, 0xFF0F},
        {0xFF1A, 0xFF20}, {0xFF3B, 0xFF40}, {0xFF5B, 0xFF65},
    };
    for (const auto& r : ranges)
        if (c >= r.lo && c <= r.hi) return true;
    return false;
}

/// Removes every punctuation code point from `s`.
inline std::string strip_punct(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        auto [cp, len] = decode(s, i);
        if (!is_punct(cp)) out.append(s.substr(i, len));
        i += len;
    }
    return out;
}

} // namespace kwmatch::utf8
