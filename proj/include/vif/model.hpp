#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vif/attention.hpp"
#include "vif/nn.hpp"
#include "vif/rng.hpp"
#include "vif/scene.hpp"
#include "vif/sequence.hpp"
#include "vif/types.hpp"

namespace vif {

struct ModelConfig {
    std::size_t depth = 12;
    std::size_t heads = 4;
    std::size_t model_dim = 64;
    std::size_t ffn_dim = 128;
    std::size_t vocab_size = 512;
    int grid_side = 8;
    std::uint64_t rng_seed = 1;

    void validate() const {
        if (depth == 0 || depth % 3 != 0)
            throw std::invalid_argument("depth must be a positive multiple of 3");
        if (heads == 0 || model_dim == 0 || model_dim % heads != 0)
            throw std::invalid_argument("model_dim must be a positive multiple of heads");
        if (ffn_dim == 0 || vocab_size == 0 || grid_side <= 0)
            throw std::invalid_argument("dims must be positive");
    }

    // Depth splits into equal thirds: shallow / middle / deep.
    LayerBand shallow_band() const { return {0, depth / 3 - 1}; }
    LayerBand middle_band() const { return {depth / 3, 2 * depth / 3 - 1}; }
    LayerBand deep_band() const { return {2 * depth / 3, depth - 1}; }
};

/// Post-softmax (and post-intervention) attention state of one layer.
struct AttentionRecord {
    std::size_t layer = 0;
    std::vector<Eigen::MatrixXd> per_head;  // row-stochastic, strictly causal
    Eigen::MatrixXd head_avg;
    std::vector<double> key_norms;          // L2 norm of the full key projection per token
};

/// Zero the hidden states of these tokens at the end of every layer in range.
struct DropSpec {
    LayerBand layer_range;
    std::vector<std::size_t> token_indices;  // sorted, unique

    void validate(std::size_t depth, std::size_t seq_len) const {
        if (layer_range.last >= depth) throw std::invalid_argument("drop layer range exceeds depth");
        detail::require_sorted_unique(token_indices, "drop token indices");
        for (std::size_t j : token_indices)
            if (j >= seq_len) throw std::invalid_argument("drop token index out of range");
    }
};

/// Reallocation intervention: the coefficients plus the per-band masks they act through.
struct ReallocationPlan {
    ReallocationConfig config;
    MaskSpec middle_mask;
    MaskSpec deep_mask;
};

struct ForwardOptions {
    bool want_logits = true;
    bool logits_last_only = false;
    bool capture_records = true;
};

struct ForwardResult {
    Eigen::MatrixXd logits;                  // tokens x vocab (or 1 x vocab when last-only)
    std::vector<AttentionRecord> records;    // one per layer when captured
    std::vector<Eigen::MatrixXd> hidden;     // post-block hidden states per layer
};

struct GenerateOptions {
    std::size_t max_steps = 1;
    double decode_temperature = 0.0;  // 0 = greedy
    std::uint64_t seed = 0;
    bool capture_records = false;
};

struct GenerateResult {
    std::vector<int> token_ids;
    std::vector<std::vector<AttentionRecord>> step_records;  // per step when captured
};

/// A small frozen multi-modal decoder. Weights are fixed at construction from
/// the config seed; forward passes expose every attention matrix and accept
/// reallocation and hidden-state-dropping hooks.
class ToyVlm {
public:
    explicit ToyVlm(const ModelConfig& config) : config_(config) {
        config.validate();
        Rng rng(derive_seed(config.rng_seed, "toy-vlm-weights"));
        const auto dim = static_cast<Eigen::Index>(config.model_dim);
        const double s = 1.0 / std::sqrt(static_cast<double>(config.model_dim));
        token_embed_ = nn::randn_matrix(rng, static_cast<Eigen::Index>(config.vocab_size), dim, s);
        color_embed_ = nn::randn_matrix(rng, kSceneColors, dim, s);
        shape_embed_ = nn::randn_matrix(rng, kSceneShapes, dim, s);
        blocks_.reserve(config.depth);
        for (std::size_t l = 0; l < config.depth; ++l)
            blocks_.push_back(nn::BlockWeights::init(rng, dim, static_cast<Eigen::Index>(config.ffn_dim)));
        unembed_ = nn::randn_matrix(rng, dim, static_cast<Eigen::Index>(config.vocab_size), s);
        readout_w_ = nn::randn_matrix(rng, dim, 1, s);
        readout_b_ = rng.normal();
    }

    const ModelConfig& config() const { return config_; }

    /// FNV-1a digest over all weight bytes in a fixed order; equal seeds give
    /// equal digests bit-for-bit.
    std::string weight_checksum() const {
        std::uint64_t h = 14695981039346656037ull;
        auto mix = [&h](const Eigen::MatrixXd& m) {
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c) {
                    std::uint64_t bits;
                    const double v = m(r, c);
                    std::memcpy(&bits, &v, sizeof bits);
                    for (int byte = 0; byte < 8; ++byte) {
                        h ^= (bits >> (8 * byte)) & 0xffu;
                        h *= 1099511628211ull;
                    }
                }
        };
        mix(token_embed_);
        mix(color_embed_);
        mix(shape_embed_);
        for (const auto& b : blocks_) {
            mix(b.wq); mix(b.wk); mix(b.wv); mix(b.wo); mix(b.w1); mix(b.w2);
        }
        mix(unembed_);
        mix(readout_w_);
        {
            std::uint64_t bits;
            std::memcpy(&bits, &readout_b_, sizeof bits);
            for (int byte = 0; byte < 8; ++byte) {
                h ^= (bits >> (8 * byte)) & 0xffu;
                h *= 1099511628211ull;
            }
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return std::string(buf);
    }

    Eigen::VectorXd embed_token(int token_id) const {
        if (token_id < 0 || token_id >= static_cast<int>(config_.vocab_size))
            throw std::invalid_argument("token id out of vocabulary");
        return token_embed_.row(token_id);
    }

    /// Fixed visual encoder: each grid cell becomes one vision embedding from
    /// its color/shape attributes.
    Eigen::VectorXd encode_cell(const SceneCell& cell) const {
        return color_embed_.row(cell.color) + shape_embed_.row(cell.shape);
    }

    /// Builds the canonical System -> Vision -> Instruction sequence for a scene.
    TokenSequence make_sequence(const Scene& scene, const std::vector<int>& system_ids,
                                const std::vector<int>& instruction_ids) const {
        if (scene.grid_side != config_.grid_side)
            throw std::invalid_argument("scene grid does not match model grid");
        if (system_ids.empty() || instruction_ids.empty())
            throw std::invalid_argument("system and instruction segments must be non-empty");
        const std::size_t n_vision = scene.cells.size();
        const std::size_t n = system_ids.size() + n_vision + instruction_ids.size();
        TokenSequence seq;
        seq.embeddings.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(config_.model_dim));
        seq.tags.reserve(n);
        seq.positions.reserve(n);
        seq.grid.reserve(n);
        seq.token_ids.reserve(n);
        int pos = 0;
        auto push_text = [&](int id, TokenType t) {
            seq.embeddings.row(static_cast<Eigen::Index>(seq.tags.size())) = embed_token(id);
            seq.tags.push_back(t);
            seq.positions.push_back(pos++);
            seq.grid.push_back(GridCoord{});
            seq.token_ids.push_back(id);
        };
        for (int id : system_ids) push_text(id, TokenType::System);
        for (std::size_t cell = 0; cell < n_vision; ++cell) {
            seq.embeddings.row(static_cast<Eigen::Index>(seq.tags.size())) = encode_cell(scene.cells[cell]);
            seq.tags.push_back(TokenType::Vision);
            seq.positions.push_back(pos++);
            seq.grid.push_back(GridCoord{static_cast<int>(cell) / scene.grid_side,
                                         static_cast<int>(cell) % scene.grid_side});
            seq.token_ids.push_back(-1);
        }
        for (int id : instruction_ids) push_text(id, TokenType::Instruction);
        seq.validate();
        return seq;
    }

    ForwardResult forward(const TokenSequence& seq,
                          const ReallocationPlan* realloc = nullptr,
                          const DropSpec* drop = nullptr,
                          const ForwardOptions& opts = {}) const {
        seq.validate();
        const auto n = static_cast<Eigen::Index>(seq.size());
        if (realloc) realloc->config.validate(config_.depth);
        if (drop) drop->validate(config_.depth, seq.size());

        const auto dim = static_cast<Eigen::Index>(config_.model_dim);
        const auto n_heads = static_cast<Eigen::Index>(config_.heads);
        const Eigen::Index head_dim = dim / n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

        Eigen::MatrixXd x = seq.embeddings;
        for (Eigen::Index i = 0; i < n; ++i)
            x.row(i) += nn::positional_encoding(seq.positions[static_cast<std::size_t>(i)], dim);

        ForwardResult result;
        result.hidden.reserve(config_.depth);
        if (opts.capture_records) result.records.reserve(config_.depth);

        for (std::size_t layer = 0; layer < config_.depth; ++layer) {
            const auto& blk = blocks_[layer];
            const Eigen::MatrixXd xn = nn::layer_norm(x);
            const Eigen::MatrixXd q = xn * blk.wq;
            const Eigen::MatrixXd k = xn * blk.wk;
            const Eigen::MatrixXd v = xn * blk.wv;

            const bool in_middle = realloc && realloc->config.middle_band.contains(layer);
            const bool in_deep = realloc && realloc->config.deep_band.contains(layer);
            const double tau = in_middle ? realloc->config.tau : 1.0;

            AttentionRecord record;
            if (opts.capture_records) {
                record.layer = layer;
                record.per_head.reserve(config_.heads);
                record.key_norms = key_norms(k);
            }

            Eigen::MatrixXd attn_out(n, dim);
            Eigen::MatrixXd head_sum = Eigen::MatrixXd::Zero(n, n);
            for (Eigen::Index h = 0; h < n_heads; ++h) {
                const auto qh = q.middleCols(h * head_dim, head_dim);
                const auto kh = k.middleCols(h * head_dim, head_dim);
                const auto vh = v.middleCols(h * head_dim, head_dim);
                Eigen::MatrixXd w = (qh * kh.transpose()) * scale;
                std::vector<double> row_buf;
                for (Eigen::Index i = 0; i < n; ++i) {
                    // Eigen is column-major; gather the causal prefix explicitly.
                    row_buf.resize(static_cast<std::size_t>(i) + 1);
                    for (Eigen::Index j = 0; j <= i; ++j) row_buf[static_cast<std::size_t>(j)] = w(i, j);
                    std::span<double> prefix(row_buf);
                    softmax_tempered_inplace(prefix, tau);
                    if (in_middle) reallocate_inplace(prefix, realloc->middle_mask, realloc->config.alpha_middle);
                    if (in_deep) reallocate_inplace(prefix, realloc->deep_mask, realloc->config.alpha_deep);
                    for (Eigen::Index j = 0; j <= i; ++j) w(i, j) = row_buf[static_cast<std::size_t>(j)];
                    for (Eigen::Index j = i + 1; j < n; ++j) w(i, j) = 0.0;  // exact causality
                }
                attn_out.middleCols(h * head_dim, head_dim) = w * vh;
                head_sum += w;
                if (opts.capture_records) record.per_head.push_back(std::move(w));
            }
            x += attn_out * blk.wo;
            x += blk.ffn(nn::layer_norm(x));

            if (drop && drop->layer_range.contains(layer))
                for (std::size_t j : drop->token_indices)
                    x.row(static_cast<Eigen::Index>(j)).setZero();

            if (opts.capture_records) {
                record.head_avg = head_sum / static_cast<double>(config_.heads);
                result.records.push_back(std::move(record));
            }
            result.hidden.push_back(x);
        }

        if (opts.want_logits) {
            const Eigen::MatrixXd xn = nn::layer_norm(x);
            if (opts.logits_last_only)
                result.logits = xn.bottomRows(1) * unembed_;
            else
                result.logits = xn * unembed_;
        }
        return result;
    }

    /// Appends Output-tagged tokens by repeated full forward passes (no cache).
    /// Greedy at temperature 0, otherwise seeded softmax sampling. The
    /// reallocation plan, when given, stays active for every decode step.
    GenerateResult generate(TokenSequence seq, const GenerateOptions& opts,
                            const ReallocationPlan* realloc = nullptr) const {
        if (opts.max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
        if (opts.decode_temperature < 0.0) throw std::invalid_argument("decode temperature must be >= 0");
        Rng rng(derive_seed(opts.seed, "decode"));
        GenerateResult out;
        for (std::size_t step = 0; step < opts.max_steps; ++step) {
            ForwardOptions fopts;
            fopts.logits_last_only = true;
            fopts.capture_records = opts.capture_records;
            ForwardResult fr = forward(seq, realloc, nullptr, fopts);
            if (opts.capture_records) out.step_records.push_back(std::move(fr.records));
            const int id = pick_token(fr.logits.row(0), opts.decode_temperature, rng);
            out.token_ids.push_back(id);
            append_output_token(seq, id);
        }
        return out;
    }

    void append_output_token(TokenSequence& seq, int token_id) const {
        const Eigen::Index n = seq.embeddings.rows();
        seq.embeddings.conservativeResize(n + 1, Eigen::NoChange);
        seq.embeddings.row(n) = embed_token(token_id);
        seq.tags.push_back(TokenType::Output);
        seq.positions.push_back(seq.next_fresh_position());
        seq.grid.push_back(GridCoord{});
        seq.token_ids.push_back(token_id);
    }

    /// Fixed linear readout over final-layer hidden states at vision/relay
    /// positions, squashed to [0,1]; one value per grid cell (positions that
    /// share a cell are averaged).
    std::vector<double> readout_report(const Eigen::MatrixXd& final_hidden,
                                       const TokenSequence& seq) const {
        const std::size_t cells = static_cast<std::size_t>(config_.grid_side) * config_.grid_side;
        std::vector<double> acc(cells, 0.0);
        std::vector<int> count(cells, 0);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (!is_vision_like(seq.tags[i])) continue;
            const auto& g = seq.grid[i];
            const std::size_t cell = static_cast<std::size_t>(g.row) * config_.grid_side + g.col;
            const double raw = (final_hidden.row(static_cast<Eigen::Index>(i)) * readout_w_)(0, 0) + readout_b_;
            acc[cell] += nn::sigmoid(raw);
            count[cell] += 1;
        }
        for (std::size_t c = 0; c < cells; ++c)
            if (count[c] > 0) acc[c] /= count[c];
            else acc[c] = nn::sigmoid(readout_b_);
        return acc;
    }

    /// Binary dump of attention records: three uint32 header fields
    /// (layer count, heads, sequence length), then per layer the per-head
    /// matrices, the head average, and the key norms, all row-major float32,
    /// little-endian throughout.
    static void dump_records(const std::vector<AttentionRecord>& records, std::ostream& os) {
        if (records.empty()) throw std::invalid_argument("no records to dump");
        const auto seq_len = static_cast<std::uint32_t>(records.front().head_avg.rows());
        const auto heads = static_cast<std::uint32_t>(records.front().per_head.size());
        const auto layers = static_cast<std::uint32_t>(records.size());
        auto put_u32 = [&os](std::uint32_t v) {
            unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
            os.write(reinterpret_cast<const char*>(b), 4);
        };
        auto put_f32 = [&os](float v) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                  static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
            os.write(reinterpret_cast<const char*>(b), 4);
        };
        put_u32(layers);
        put_u32(heads);
        put_u32(seq_len);
        auto put_matrix = [&](const Eigen::MatrixXd& m) {
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c)
                    put_f32(static_cast<float>(m(r, c)));
        };
        for (const auto& rec : records) {
            for (const auto& head : rec.per_head) put_matrix(head);
            put_matrix(rec.head_avg);
            for (double kn : rec.key_norms) put_f32(static_cast<float>(kn));
        }
    }

private:
    static int pick_token(const Eigen::RowVectorXd& logits, double temperature, Rng& rng) {
        if (temperature == 0.0) {
            Eigen::Index best = 0;
            logits.maxCoeff(&best);
            return static_cast<int>(best);
        }
        std::vector<double> probs(static_cast<std::size_t>(logits.cols()));
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            probs[static_cast<std::size_t>(j)] = logits(j) / temperature;
        softmax_tempered_inplace(probs, 1.0);
        double u = rng.uniform();
        double cum = 0.0;
        for (std::size_t j = 0; j < probs.size(); ++j) {
            cum += probs[j];
            if (u < cum) return static_cast<int>(j);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    ModelConfig config_;
    Eigen::MatrixXd token_embed_;
    Eigen::MatrixXd color_embed_;
    Eigen::MatrixXd shape_embed_;
    std::vector<nn::BlockWeights> blocks_;
    Eigen::MatrixXd unembed_;
    Eigen::MatrixXd readout_w_;  // model_dim x 1
    double readout_b_ = 0.0;
};

}  // namespace vif
