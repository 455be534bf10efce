#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "vif/types.hpp"

namespace vif {

/// Raw pre-softmax attention scores for one query row, tagged per key position.
struct ScoreRow {
    std::vector<double> values;
    std::vector<TokenType> type_tags;
};

/// Row-stochastic attention weights for one query row.
struct AttentionRow {
    std::vector<double> weights;

    double sum() const {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }
};

/// Key positions whose mass is collected (sources) and the positions that
/// receive it (sinks). Disjoint by construction.
struct MaskSpec {
    std::vector<std::size_t> source_indices;  // sorted, unique
    std::vector<std::size_t> sink_indices;    // sorted, unique

    bool empty() const { return source_indices.empty() || sink_indices.empty(); }
};

enum class Band { Middle, Deep };

/// Temperature and per-band reallocation coefficients. Temperature applies to
/// the middle band only; the deep band keeps the standard softmax.
struct ReallocationConfig {
    double tau = 0.8;
    double alpha_middle = 0.1;
    double alpha_deep = 0.3;
    LayerBand middle_band;
    LayerBand deep_band;

    void validate(std::size_t depth) const {
        if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
        if (alpha_middle < 0.0 || alpha_middle >= 1.0)
            throw std::invalid_argument("alpha_middle must be in [0,1)");
        if (alpha_deep < 0.0 || alpha_deep >= 1.0)
            throw std::invalid_argument("alpha_deep must be in [0,1)");
        if (middle_band.overlaps(deep_band))
            throw std::invalid_argument("middle and deep bands must be disjoint");
        if (middle_band.last >= depth || deep_band.last >= depth)
            throw std::invalid_argument("band exceeds model depth");
    }
};

/// Per-layer fraction of attention mass per token type.
struct AllocationProfile {
    std::vector<TypeFractions> per_layer;

    double band_mean(const LayerBand& band, TokenType t) const {
        double acc = 0.0;
        for (std::size_t l = band.first; l <= band.last && l < per_layer.size(); ++l)
            acc += fraction_of(per_layer[l], t);
        return acc / static_cast<double>(band.size());
    }
};

namespace detail {

inline void require_finite(std::span<const double> xs, const char* what) {
    for (double x : xs)
        if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + " must be finite");
}

inline void require_sorted_unique(const std::vector<std::size_t>& v, const char* what) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] <= v[i - 1]) throw std::invalid_argument(std::string(what) + " must be sorted and unique");
}

}  // namespace detail

/// Tempered softmax over a raw score span, in place. Max-subtraction keeps the
/// exponentials bounded; the caller guarantees finiteness and tau > 0.
inline void softmax_tempered_inplace(std::span<double> scores, double tau) {
    double m = scores[0];
    for (double s : scores) m = std::max(m, s);
    double z = 0.0;
    for (double& s : scores) {
        s = std::exp((s - m) / tau);
        z += s;
    }
    for (double& s : scores) s /= z;
}

inline AttentionRow softmax_tempered(const ScoreRow& scores, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (scores.values.empty()) throw std::invalid_argument("score row must be non-empty");
    if (!scores.type_tags.empty() && scores.type_tags.size() != scores.values.size())
        throw std::invalid_argument("tag/width mismatch");
    detail::require_finite(scores.values, "attention scores");
    AttentionRow out;
    out.weights = scores.values;
    softmax_tempered_inplace(out.weights, tau);
    return out;
}

/// Mean fraction of attention mass landing on each token type, averaged over
/// query rows so profiles stay comparable across sequence lengths.
inline TypeFractions allocation_by_type(const std::vector<AttentionRow>& rows,
                                        const std::vector<TokenType>& tags) {
    if (rows.empty()) throw std::invalid_argument("allocation needs at least one query row");
    TypeFractions acc{};
    for (const auto& row : rows) {
        if (row.weights.size() != tags.size())
            throw std::invalid_argument("tag/width mismatch");
        for (std::size_t j = 0; j < tags.size(); ++j)
            acc[static_cast<std::size_t>(tags[j])] += row.weights[j];
    }
    for (double& a : acc) a /= static_cast<double>(rows.size());
    return acc;
}

/// Collect alpha of the source mass and hand it to the sinks in proportion to
/// the mass they already hold; total row mass is conserved exactly. A sink set
/// with zero mass splits the collected amount uniformly. Mask indices at or
/// beyond the span length are ignored, which is what keeps the transform
/// causal when applied to a prefix row.
inline void reallocate_inplace(std::span<double> row, const MaskSpec& mask, double alpha) {
    if (alpha == 0.0 || mask.empty()) return;

    double source_mass = 0.0;
    for (std::size_t j : mask.source_indices)
        if (j < row.size()) source_mass += row[j];
    double sink_mass = 0.0;
    std::size_t sinks_in_range = 0;
    for (std::size_t j : mask.sink_indices)
        if (j < row.size()) {
            sink_mass += row[j];
            ++sinks_in_range;
        }
    if (sinks_in_range == 0) return;

    const double collected = alpha * source_mass;
    for (std::size_t j : mask.source_indices)
        if (j < row.size()) row[j] *= (1.0 - alpha);
    if (sink_mass > 0.0) {
        for (std::size_t j : mask.sink_indices)
            if (j < row.size()) row[j] += collected * row[j] / sink_mass;
    } else {
        const double share = collected / static_cast<double>(sinks_in_range);
        for (std::size_t j : mask.sink_indices)
            if (j < row.size()) row[j] += share;
    }
}

inline AttentionRow reallocate_row(const AttentionRow& row, const MaskSpec& mask, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0) throw std::invalid_argument("alpha must be in [0,1)");
    detail::require_sorted_unique(mask.source_indices, "source indices");
    detail::require_sorted_unique(mask.sink_indices, "sink indices");
    for (std::size_t j : mask.source_indices)
        if (j >= row.weights.size()) throw std::invalid_argument("source index out of range");
    for (std::size_t j : mask.sink_indices)
        if (j >= row.weights.size()) throw std::invalid_argument("sink index out of range");
    // disjointness: both sorted, walk in lockstep
    {
        std::size_t a = 0, b = 0;
        while (a < mask.source_indices.size() && b < mask.sink_indices.size()) {
            if (mask.source_indices[a] == mask.sink_indices[b])
                throw std::invalid_argument("source and sink sets overlap");
            if (mask.source_indices[a] < mask.sink_indices[b]) ++a; else ++b;
        }
    }
    AttentionRow out = row;
    reallocate_inplace(out.weights, mask, alpha);
    return out;
}

/// Builds the per-band collection/reallocation masks from token tags.
/// Middle band: mass leaves inactive vision and instruction positions and
/// lands on active vision positions. Deep band: mass leaves all vision
/// positions and lands on instruction positions. Relay tokens count as vision.
inline MaskSpec build_masks(const std::vector<TokenType>& tags,
                            const std::vector<std::size_t>& inactive_vision,
                            Band band) {
    detail::require_sorted_unique(inactive_vision, "inactive vision indices");
    for (std::size_t j : inactive_vision) {
        if (j >= tags.size() || !is_vision_like(tags[j]))
            throw std::invalid_argument("inactive set contains a non-vision index");
    }
    MaskSpec mask;
    auto inactive = [&](std::size_t j) {
        return std::binary_search(inactive_vision.begin(), inactive_vision.end(), j);
    };
    for (std::size_t j = 0; j < tags.size(); ++j) {
        if (band == Band::Middle) {
            if (tags[j] == TokenType::Instruction || (is_vision_like(tags[j]) && inactive(j)))
                mask.source_indices.push_back(j);
            else if (is_vision_like(tags[j]))
                mask.sink_indices.push_back(j);
        } else {
            if (is_vision_like(tags[j]))
                mask.source_indices.push_back(j);
            else if (tags[j] == TokenType::Instruction)
                mask.sink_indices.push_back(j);
        }
    }
    return mask;
}

/// Per-token Euclidean norms of key vectors (one row per token).
inline std::vector<double> key_norms(const Eigen::MatrixXd& key_vectors) {
    if (!key_vectors.allFinite()) throw std::invalid_argument("key vectors must be finite");
    std::vector<double> norms(static_cast<std::size_t>(key_vectors.rows()));
    for (Eigen::Index i = 0; i < key_vectors.rows(); ++i)
        norms[static_cast<std::size_t>(i)] = key_vectors.row(i).norm();
    return norms;
}

}  // namespace vif
