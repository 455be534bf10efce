#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "vif/model.hpp"
#include "vif/rng.hpp"
#include "vif/types.hpp"

namespace vif {

/// One vision token's middle-band allocation values, indexed by its cell
/// within the vision block (grid order).
struct Trajectory {
    std::size_t token_index = 0;
    std::vector<double> values;
};

struct SelectionParams {
    double omega = 0.3;                  // unimodal salience threshold
    double trend_tolerance = 0.15;       // counter-trend forgiveness, fraction of peak
    double inactive_fluctuation = 0.20;
    double random_component_cap = 0.10;  // of the selected-set size
    std::size_t keynorm_buffer = 3;      // neighbors added per selected token (3x3 space)

    void validate() const {
        if (!(omega > 0.0 && omega < 1.0)) throw std::invalid_argument("omega must be in (0,1)");
        if (trend_tolerance < 0.0) throw std::invalid_argument("trend tolerance must be >= 0");
    }
};

enum class SubsetLabel : std::uint8_t {
    Random = 0,
    Inactive = 1,
    Rise = 2,
    Fall = 3,
    Unimodal = 4,
    Unclassified = 5,
};

inline constexpr std::size_t kNumSubsetLabels = 6;

inline std::string_view subset_label_name(SubsetLabel s) {
    switch (s) {
        case SubsetLabel::Random: return "random";
        case SubsetLabel::Inactive: return "inactive";
        case SubsetLabel::Rise: return "rise";
        case SubsetLabel::Fall: return "fall";
        case SubsetLabel::Unimodal: return "unimodal";
        case SubsetLabel::Unclassified: return "unclassified";
    }
    throw std::invalid_argument("unknown subset label");
}

/// Relative prominence of the peak over the higher endpoint, floored at 0.
inline double peak_salience(std::span<const double> values) {
    if (values.size() < 3) throw std::invalid_argument("trajectory needs at least 3 points");
    double peak = values[0];
    for (double v : values) peak = std::max(peak, v);
    const double endpoint = std::max(values.front(), values.back());
    const double s = (peak - endpoint) / std::max(peak, 1e-12);
    return std::max(s, 0.0);
}

namespace detail {

// Steps against the trend are forgiven while they stay below the tolerance.
inline bool tolerated_increasing(std::span<const double> v, double tol) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] <= v[i - 1] - tol) return false;
    return v.back() - v.front() > tol;
}

inline bool tolerated_decreasing(std::span<const double> v, double tol) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] >= v[i - 1] + tol) return false;
    return v.front() - v.back() > tol;
}

/// True when the curve rises to a single maximal plateau and falls after it.
inline bool unimodal_shape(std::span<const double> v, double tol) {
    double peak = v[0];
    for (double x : v) peak = std::max(peak, x);
    std::size_t first_peak = v.size(), last_peak = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == peak) {
            first_peak = std::min(first_peak, i);
            last_peak = std::max(last_peak, i);
        }
    }
    for (std::size_t i = first_peak; i <= last_peak; ++i)
        if (v[i] != peak) return false;  // split plateau
    if (first_peak == 0 || last_peak == v.size() - 1) return false;
    for (std::size_t i = 1; i <= first_peak; ++i)
        if (v[i] <= v[i - 1] - tol) return false;
    for (std::size_t i = last_peak + 1; i < v.size(); ++i)
        if (v[i] >= v[i - 1] + tol) return false;
    return true;
}

}  // namespace detail

/// Classifies one allocation trajectory. Precedence resolves overlapping
/// matches: Inactive, then Unimodal, then Rise, then Fall.
inline SubsetLabel classify_trajectory(const Trajectory& traj, const SelectionParams& params,
                                       double global_lower_quartile) {
    const auto& v = traj.values;
    if (v.size() < 3) throw std::invalid_argument("trajectory needs at least 3 points");
    double peak = v[0], low = v[0], mean = 0.0;
    for (double x : v) {
        peak = std::max(peak, x);
        low = std::min(low, x);
        mean += x;
    }
    mean /= static_cast<double>(v.size());

    if (mean < global_lower_quartile &&
        (peak - low) / std::max(mean, 1e-12) <= params.inactive_fluctuation)
        return SubsetLabel::Inactive;

    const double tol = params.trend_tolerance * peak;
    if (detail::unimodal_shape(v, tol) && peak_salience(v) >= params.omega)
        return SubsetLabel::Unimodal;
    if (detail::tolerated_increasing(v, tol)) return SubsetLabel::Rise;
    if (detail::tolerated_decreasing(v, tol)) return SubsetLabel::Fall;
    return SubsetLabel::Unclassified;
}

/// Lower quartile (linear interpolation) of the per-trajectory means; this is
/// the global threshold the inactive rule compares against.
inline double lower_quartile_of_means(const std::vector<Trajectory>& trajectories) {
    if (trajectories.empty()) return 0.0;
    std::vector<double> means;
    means.reserve(trajectories.size());
    for (const auto& t : trajectories) {
        double m = 0.0;
        for (double x : t.values) m += x;
        means.push_back(m / static_cast<double>(t.values.size()));
    }
    std::sort(means.begin(), means.end());
    const double idx = 0.25 * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(idx);
    const double frac = idx - static_cast<double>(lo);
    if (lo + 1 >= means.size()) return means[lo];
    return means[lo] + frac * (means[lo + 1] - means[lo]);
}

inline std::vector<SubsetLabel> classify_all(const std::vector<Trajectory>& trajectories,
                                             const SelectionParams& params) {
    const double quartile = lower_quartile_of_means(trajectories);
    std::vector<SubsetLabel> labels;
    labels.reserve(trajectories.size());
    for (const auto& t : trajectories)
        labels.push_back(classify_trajectory(t, params, quartile));
    return labels;
}

/// Unimodal token indices ordered by descending salience (ties by index).
inline std::vector<std::size_t> select_unimodal(const std::vector<Trajectory>& trajectories,
                                                const SelectionParams& params) {
    params.validate();
    const double quartile = lower_quartile_of_means(trajectories);
    std::vector<std::pair<double, std::size_t>> picked;
    for (const auto& t : trajectories) {
        if (classify_trajectory(t, params, quartile) == SubsetLabel::Unimodal)
            picked.emplace_back(peak_salience(t.values), t.token_index);
    }
    std::sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::size_t> out;
    out.reserve(picked.size());
    for (const auto& [sal, idx] : picked) out.push_back(idx);
    return out;
}

namespace detail {

/// Size of the largest 4-connected component within `cells` on a g x g grid.
inline std::size_t largest_component(const std::vector<std::size_t>& cells, int grid_side) {
    std::vector<char> in_set(static_cast<std::size_t>(grid_side) * grid_side, 0);
    for (std::size_t c : cells) in_set[c] = 1;
    std::vector<char> seen(in_set.size(), 0);
    std::size_t best = 0;
    for (std::size_t start : cells) {
        if (seen[start]) continue;
        std::size_t size = 0;
        std::deque<std::size_t> queue{start};
        seen[start] = 1;
        while (!queue.empty()) {
            const std::size_t c = queue.front();
            queue.pop_front();
            ++size;
            const int r = static_cast<int>(c) / grid_side;
            const int col = static_cast<int>(c) % grid_side;
            const int dr[] = {-1, 1, 0, 0};
            const int dc[] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int nr = r + dr[k], nc = col + dc[k];
                if (nr < 0 || nr >= grid_side || nc < 0 || nc >= grid_side) continue;
                const auto n = static_cast<std::size_t>(nr) * grid_side + nc;
                if (in_set[n] && !seen[n]) {
                    seen[n] = 1;
                    queue.push_back(n);
                }
            }
        }
        best = std::max(best, size);
    }
    return best;
}

}  // namespace detail

/// Uniform sample of grid cells, resampled until the largest 4-connected
/// component stays within the 10% cap (singletons always pass; below ten
/// cells any multi-cell component forces a resample).
inline std::vector<std::size_t> select_random(std::size_t count, int grid_side,
                                              std::uint64_t rng_seed,
                                              const SelectionParams& params) {
    const std::size_t cells = static_cast<std::size_t>(grid_side) * grid_side;
    if (count > cells) throw std::invalid_argument("cannot sample more cells than the grid holds");
    if (count == 0) return {};
    const auto cap = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(params.random_component_cap * static_cast<double>(count))));
    Rng rng(derive_seed(rng_seed, "random-select"));
    std::vector<std::size_t> pool(cells);
    for (std::size_t attempt = 0; attempt < 10000; ++attempt) {
        for (std::size_t i = 0; i < cells; ++i) pool[i] = i;
        for (std::size_t i = 0; i < count; ++i) {
            const auto j = i + rng.uniform_index(cells - i);
            std::swap(pool[i], pool[j]);
        }
        std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
        std::sort(chosen.begin(), chosen.end());
        if (detail::largest_component(chosen, grid_side) <= cap) return chosen;
    }
    throw std::runtime_error("random selection constraint infeasible after 10000 attempts");
}

/// Key-Norm selection: per-layer norms are normalized to sum to one so the
/// unimodal rule (and omega) applies unchanged, then each selected token is
/// expanded with its highest-norm 3x3 neighbors. `max_initial` of 0 keeps
/// every initially selected token.
inline std::vector<std::size_t> select_by_keynorm(
    const std::vector<std::vector<double>>& norms_per_layer, std::size_t max_initial,
    int grid_side, const SelectionParams& params) {
    params.validate();
    if (norms_per_layer.empty()) return {};
    const std::size_t tokens = norms_per_layer.front().size();
    for (const auto& layer : norms_per_layer)
        if (layer.size() != tokens) throw std::invalid_argument("norm layers disagree in width");

    std::vector<std::vector<double>> normalized = norms_per_layer;
    for (auto& layer : normalized) {
        double sum = 0.0;
        for (double x : layer) sum += x;
        if (sum > 0.0)
            for (double& x : layer) x /= sum;
    }
    std::vector<Trajectory> trajectories(tokens);
    std::vector<double> mean_norm(tokens, 0.0);
    for (std::size_t t = 0; t < tokens; ++t) {
        trajectories[t].token_index = t;
        trajectories[t].values.reserve(normalized.size());
        for (const auto& layer : normalized) {
            trajectories[t].values.push_back(layer[t]);
            mean_norm[t] += layer[t];
        }
        mean_norm[t] /= static_cast<double>(normalized.size());
    }

    std::vector<std::size_t> initial = select_unimodal(trajectories, params);
    if (max_initial > 0 && initial.size() > max_initial) initial.resize(max_initial);

    std::vector<char> in_set(tokens, 0);
    for (std::size_t t : initial) in_set[t] = 1;
    std::vector<std::size_t> result = initial;
    for (std::size_t t : initial) {
        const int r = static_cast<int>(t) / grid_side;
        const int c = static_cast<int>(t) % grid_side;
        std::vector<std::size_t> neighbors;
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                if (dr == 0 && dc == 0) continue;
                const int nr = r + dr, nc = c + dc;
                if (nr < 0 || nr >= grid_side || nc < 0 || nc >= grid_side) continue;
                const auto n = static_cast<std::size_t>(nr) * grid_side + nc;
                if (!in_set[n]) neighbors.push_back(n);
            }
        std::sort(neighbors.begin(), neighbors.end(), [&](std::size_t a, std::size_t b) {
            if (mean_norm[a] != mean_norm[b]) return mean_norm[a] > mean_norm[b];
            return a < b;
        });
        for (std::size_t k = 0; k < neighbors.size() && k < params.keynorm_buffer; ++k) {
            in_set[neighbors[k]] = 1;
            result.push_back(neighbors[k]);
        }
    }
    std::sort(result.begin(), result.end());
    return result;
}

/// Jaccard overlap; two empty sets count as identical.
inline double overlap(std::vector<std::size_t> a, std::vector<std::size_t> b) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0, i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) { ++inter; ++i; ++j; }
        else if (a[i] < b[j]) ++i;
        else ++j;
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Per-label fraction over all classified vision tokens.
inline std::array<double, kNumSubsetLabels> subset_proportions(const std::vector<SubsetLabel>& labels) {
    if (labels.empty()) throw std::invalid_argument("no labels");
    std::array<double, kNumSubsetLabels> out{};
    for (SubsetLabel l : labels) out[static_cast<std::size_t>(l)] += 1.0;
    for (double& x : out) x /= static_cast<double>(labels.size());
    return out;
}

/// Allocation trajectories of each vision token across the middle band:
/// value = query-averaged head-averaged attention on that token per layer.
/// Indices are cells within the vision block (grid order).
inline std::vector<Trajectory> vision_trajectories(const std::vector<AttentionRecord>& records,
                                                   const TokenSequence& seq,
                                                   const LayerBand& middle_band) {
    const auto vision = seq.indices_of(TokenType::Vision);
    std::vector<Trajectory> trajectories(vision.size());
    for (std::size_t t = 0; t < vision.size(); ++t) {
        trajectories[t].token_index = t;
        trajectories[t].values.reserve(middle_band.size());
    }
    for (std::size_t layer = middle_band.first; layer <= middle_band.last; ++layer) {
        const auto& avg = records.at(layer).head_avg;
        const double q = static_cast<double>(avg.rows());
        for (std::size_t t = 0; t < vision.size(); ++t) {
            const auto col = static_cast<Eigen::Index>(vision[t]);
            trajectories[t].values.push_back(avg.col(col).sum() / q);
        }
    }
    return trajectories;
}

/// Key norms of the vision tokens per middle-band layer, for the Key-Norm strategy.
inline std::vector<std::vector<double>> vision_keynorms(const std::vector<AttentionRecord>& records,
                                                        const TokenSequence& seq,
                                                        const LayerBand& middle_band) {
    const auto vision = seq.indices_of(TokenType::Vision);
    std::vector<std::vector<double>> out;
    out.reserve(middle_band.size());
    for (std::size_t layer = middle_band.first; layer <= middle_band.last; ++layer) {
        const auto& norms = records.at(layer).key_norms;
        std::vector<double> layer_norms;
        layer_norms.reserve(vision.size());
        for (std::size_t idx : vision) layer_norms.push_back(norms.at(idx));
        out.push_back(std::move(layer_norms));
    }
    return out;
}

/// ASCII PGM (P2) mask of selected grid cells, selected cells white.
inline void write_mask_pgm(const std::vector<std::size_t>& selected, int grid_side, std::ostream& os) {
    std::vector<char> in_set(static_cast<std::size_t>(grid_side) * grid_side, 0);
    for (std::size_t c : selected) in_set.at(c) = 1;
    os << "P2\n" << grid_side << " " << grid_side << "\n255\n";
    for (int r = 0; r < grid_side; ++r) {
        for (int c = 0; c < grid_side; ++c) {
            os << (in_set[static_cast<std::size_t>(r) * grid_side + c] ? 255 : 0);
            os << (c + 1 == grid_side ? '\n' : ' ');
        }
    }
}

/// CSV of (row, col) pairs of selected cells.
inline void write_mask_csv(const std::vector<std::size_t>& selected, int grid_side, std::ostream& os) {
    os << "row,col\n";
    for (std::size_t c : selected)
        os << (c / static_cast<std::size_t>(grid_side)) << "," << (c % static_cast<std::size_t>(grid_side)) << "\n";
}

}  // namespace vif
