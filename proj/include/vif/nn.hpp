#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

#include "vif/rng.hpp"

namespace vif::nn {

inline Eigen::MatrixXd randn_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = scale * rng.normal();
    return m;
}

/// Row-wise layer normalization with unit gain and zero bias.
inline Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, double eps = 1e-5) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        out.row(i) = (x.row(i).array() - mean) / std::sqrt(var + eps);
    }
    return out;
}

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

/// Sinusoidal positional encoding; a pure function of the position id, so
/// reused relay ids reproduce their source encoding exactly.
inline Eigen::VectorXd positional_encoding(int position, Eigen::Index dim) {
    Eigen::VectorXd pe(dim);
    for (Eigen::Index k = 0; k < dim; k += 2) {
        const double rate = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(dim));
        pe(k) = std::sin(position * rate);
        if (k + 1 < dim) pe(k + 1) = std::cos(position * rate);
    }
    return pe;
}

/// Weights of one pre-norm transformer block (attention + feed-forward).
struct BlockWeights {
    Eigen::MatrixXd wq, wk, wv, wo;  // model_dim x model_dim
    Eigen::MatrixXd w1;              // model_dim x ffn_dim
    Eigen::MatrixXd w2;              // ffn_dim x model_dim

    static BlockWeights init(Rng& rng, Eigen::Index model_dim, Eigen::Index ffn_dim) {
        const double s = 1.0 / std::sqrt(static_cast<double>(model_dim));
        BlockWeights w;
        w.wq = randn_matrix(rng, model_dim, model_dim, s);
        w.wk = randn_matrix(rng, model_dim, model_dim, s);
        w.wv = randn_matrix(rng, model_dim, model_dim, s);
        w.wo = randn_matrix(rng, model_dim, model_dim, s);
        w.w1 = randn_matrix(rng, model_dim, ffn_dim, s);
        w.w2 = randn_matrix(rng, ffn_dim, model_dim, 1.0 / std::sqrt(static_cast<double>(ffn_dim)));
        return w;
    }

    Eigen::MatrixXd ffn(const Eigen::MatrixXd& x) const {
        Eigen::MatrixXd hidden = x * w1;
        for (Eigen::Index i = 0; i < hidden.rows(); ++i)
            for (Eigen::Index j = 0; j < hidden.cols(); ++j)
                hidden(i, j) = gelu(hidden(i, j));
        return hidden * w2;
    }
};

}  // namespace vif::nn
