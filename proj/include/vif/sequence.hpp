#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "vif/types.hpp"

namespace vif {

/// Typed token stream fed to the toy decoder. Canonical tag order is
/// System+ Vision+ Relay* Instruction+ Output*. Non-relay tokens carry a
/// fresh position enumeration; relay tokens keep the position ids their
/// source tokens held in the previous agent, so monotonicity is only
/// enforced over the non-relay backbone.
struct TokenSequence {
    Eigen::MatrixXd embeddings;            // tokens x model_dim
    std::vector<TokenType> tags;
    std::vector<int> positions;
    std::vector<GridCoord> grid;           // valid for vision/relay tokens only
    std::vector<int> token_ids;            // -1 for vision/relay tokens

    std::size_t size() const { return tags.size(); }
    Eigen::Index dim() const { return embeddings.cols(); }

    std::vector<std::size_t> indices_of(TokenType t) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < tags.size(); ++i)
            if (tags[i] == t) out.push_back(i);
        return out;
    }

    std::size_t count_of(TokenType t) const {
        std::size_t n = 0;
        for (TokenType tag : tags)
            if (tag == t) ++n;
        return n;
    }

    /// True iff the tag stream matches System+ Vision+ Relay* Instruction+ Output*.
    bool canonical_order() const {
        static constexpr TokenType stages[] = {TokenType::System, TokenType::Vision,
                                               TokenType::Relay, TokenType::Instruction,
                                               TokenType::Output};
        std::size_t stage = 0;
        std::size_t i = 0;
        std::size_t counts[5] = {0, 0, 0, 0, 0};
        while (i < tags.size()) {
            if (stage < 5 && tags[i] == stages[stage]) {
                ++counts[stage];
                ++i;
            } else if (stage < 5) {
                ++stage;
            } else {
                return false;
            }
        }
        return counts[0] >= 1 && counts[1] >= 1 && counts[3] >= 1;
    }

    void validate() const {
        const auto n = tags.size();
        if (n == 0) throw std::invalid_argument("sequence must be non-empty");
        if (positions.size() != n || grid.size() != n || token_ids.size() != n ||
            static_cast<std::size_t>(embeddings.rows()) != n)
            throw std::invalid_argument("sequence field lengths disagree");
        if (!canonical_order()) throw std::invalid_argument("sequence tags out of canonical order");
        int last_pos = -1;
        for (std::size_t i = 0; i < n; ++i) {
            if (tags[i] == TokenType::Relay) continue;
            if (positions[i] <= last_pos)
                throw std::invalid_argument("non-relay positions must be strictly increasing");
            last_pos = positions[i];
        }
        for (std::size_t i = 0; i < n; ++i)
            if (is_vision_like(tags[i]) && !grid[i].valid())
                throw std::invalid_argument("vision/relay token without grid coordinates");
        if (!embeddings.allFinite()) throw std::invalid_argument("embeddings must be finite");
    }

    /// Next free position id on the non-relay backbone.
    int next_fresh_position() const {
        int m = -1;
        for (std::size_t i = 0; i < tags.size(); ++i)
            if (tags[i] != TokenType::Relay) m = std::max(m, positions[i]);
        return m + 1;
    }
};

}  // namespace vif
