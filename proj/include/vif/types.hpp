#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vif {

/// Token classes of the multi-modal sequence. Relay tokens only exist after
/// relay injection; everything else is present from turn one.
enum class TokenType : std::uint8_t {
    System = 0,
    Vision = 1,
    Relay = 2,
    Instruction = 3,
    Output = 4,
};

inline constexpr std::size_t kNumTokenTypes = 5;

inline constexpr std::array<TokenType, kNumTokenTypes> kAllTokenTypes = {
    TokenType::System, TokenType::Vision, TokenType::Relay,
    TokenType::Instruction, TokenType::Output,
};

inline std::string_view token_type_name(TokenType t) {
    switch (t) {
        case TokenType::System: return "system";
        case TokenType::Vision: return "vision";
        case TokenType::Relay: return "relay";
        case TokenType::Instruction: return "instruction";
        case TokenType::Output: return "output";
    }
    throw std::invalid_argument("unknown token type");
}

/// Vision tokens and relay tokens both carry image-patch content; masks and
/// allocation boosts treat them as one family.
inline bool is_vision_like(TokenType t) {
    return t == TokenType::Vision || t == TokenType::Relay;
}

/// Patch coordinates on the g x g vision grid.
struct GridCoord {
    int row = -1;
    int col = -1;

    bool valid() const { return row >= 0 && col >= 0; }
    friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

/// Inclusive layer-index range.
struct LayerBand {
    std::size_t first = 0;
    std::size_t last = 0;

    bool contains(std::size_t layer) const { return layer >= first && layer <= last; }
    std::size_t size() const { return last - first + 1; }
    bool overlaps(const LayerBand& other) const {
        return first <= other.last && other.first <= last;
    }
};

/// Fraction of attention mass per token type; sums to 1 for a stochastic layer.
using TypeFractions = std::array<double, kNumTokenTypes>;

inline double& fraction_of(TypeFractions& f, TokenType t) {
    return f[static_cast<std::size_t>(t)];
}

inline double fraction_of(const TypeFractions& f, TokenType t) {
    return f[static_cast<std::size_t>(t)];
}

}  // namespace vif
