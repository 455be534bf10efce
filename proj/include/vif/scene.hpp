#pragma once

#include <cstdint>
#include <vector>

#include "vif/rng.hpp"

namespace vif {

inline constexpr int kSceneColors = 8;
inline constexpr int kSceneShapes = 4;

/// One cell of the synthetic image grid: a categorical color/shape pair.
struct SceneCell {
    int color = 0;
    int shape = 0;

    /// Scalar code in (0,1) used as the ground-truth fact for this cell.
    double fact() const {
        return (static_cast<double>(color * kSceneShapes + shape) + 0.5) /
               static_cast<double>(kSceneColors * kSceneShapes);
    }
};

/// Seeded stand-in for a benchmark image: a g x g grid of attribute cells
/// whose per-cell codes form the ground-truth fact vector.
struct Scene {
    int grid_side = 0;
    std::vector<SceneCell> cells;  // row-major

    std::vector<double> fact_vector() const {
        std::vector<double> f;
        f.reserve(cells.size());
        for (const auto& c : cells) f.push_back(c.fact());
        return f;
    }
};

inline Scene make_scene(std::uint64_t seed, int grid_side) {
    Rng rng(derive_seed(seed, "scene"));
    Scene scene;
    scene.grid_side = grid_side;
    scene.cells.resize(static_cast<std::size_t>(grid_side) * grid_side);
    for (auto& cell : scene.cells) {
        cell.color = static_cast<int>(rng.uniform_index(kSceneColors));
        cell.shape = static_cast<int>(rng.uniform_index(kSceneShapes));
    }
    return scene;
}

/// Seeded token ids standing in for a task prompt.
inline std::vector<int> make_question(std::uint64_t seed, std::size_t length, int vocab_size) {
    Rng rng(derive_seed(seed, "question"));
    std::vector<int> ids(length);
    for (auto& id : ids) id = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(vocab_size)));
    return ids;
}

}  // namespace vif
