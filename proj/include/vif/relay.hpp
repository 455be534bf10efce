#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "vif/attention.hpp"
#include "vif/nn.hpp"
#include "vif/rng.hpp"
#include "vif/sequence.hpp"
#include "vif/types.hpp"

namespace vif {

inline constexpr int kMergedSourceAgent = -1;

/// Relay tokens carried between agents: embeddings plus the spatial metadata
/// needed for positional reuse at the receiving side.
struct RelayMessage {
    Eigen::MatrixXd embeddings;          // n x model_dim
    std::vector<int> source_positions;   // position ids in the source agent
    std::vector<GridCoord> source_grid;
    int source_agent = kMergedSourceAgent;

    std::size_t size() const { return static_cast<std::size_t>(embeddings.rows()); }
    bool empty() const { return size() == 0; }

    void validate() const {
        const auto n = size();
        if (source_positions.size() != n || source_grid.size() != n)
            throw std::invalid_argument("relay message metadata lengths disagree");
        if (n > 0 && !embeddings.allFinite())
            throw std::invalid_argument("relay embeddings must be finite");
    }
};

struct RelayBlockConfig {
    std::size_t heads = 4;
    std::size_t model_dim = 64;
    std::size_t ffn_dim = 128;
    std::uint64_t rng_seed = 7;

    void validate() const {
        if (heads == 0 || model_dim == 0 || model_dim % heads != 0)
            throw std::invalid_argument("model_dim must be a positive multiple of heads");
        if (ffn_dim == 0) throw std::invalid_argument("ffn_dim must be positive");
    }
};

/// One frozen pre-norm transformer block with full (unmasked) self-attention,
/// so relay tokens can read the instruction tokens concatenated after them.
class RelayBlock {
public:
    explicit RelayBlock(const RelayBlockConfig& config) : config_(config) {
        config.validate();
        Rng rng(derive_seed(config.rng_seed, "relay-block-weights"));
        weights_ = nn::BlockWeights::init(rng, static_cast<Eigen::Index>(config.model_dim),
                                          static_cast<Eigen::Index>(config.ffn_dim));
    }

    const RelayBlockConfig& config() const { return config_; }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
        const auto n = x.rows();
        const auto dim = static_cast<Eigen::Index>(config_.model_dim);
        const auto n_heads = static_cast<Eigen::Index>(config_.heads);
        const Eigen::Index head_dim = dim / n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

        const Eigen::MatrixXd xn = nn::layer_norm(x);
        const Eigen::MatrixXd q = xn * weights_.wq;
        const Eigen::MatrixXd k = xn * weights_.wk;
        const Eigen::MatrixXd v = xn * weights_.wv;
        Eigen::MatrixXd attn_out(n, dim);
        std::vector<double> row_buf(static_cast<std::size_t>(n));
        for (Eigen::Index h = 0; h < n_heads; ++h) {
            const auto qh = q.middleCols(h * head_dim, head_dim);
            const auto kh = k.middleCols(h * head_dim, head_dim);
            const auto vh = v.middleCols(h * head_dim, head_dim);
            Eigen::MatrixXd w = (qh * kh.transpose()) * scale;
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) row_buf[static_cast<std::size_t>(j)] = w(i, j);
                softmax_tempered_inplace(row_buf, 1.0);
                for (Eigen::Index j = 0; j < n; ++j) w(i, j) = row_buf[static_cast<std::size_t>(j)];
            }
            attn_out.middleCols(h * head_dim, head_dim) = w * vh;
        }
        Eigen::MatrixXd out = x + attn_out * weights_.wo;
        out += weights_.ffn(nn::layer_norm(out));
        return out;
    }

private:
    RelayBlockConfig config_;
    nn::BlockWeights weights_;
};

/// Runs the relay tokens, concatenated with the instruction tokens, through
/// the block and keeps the first n output rows; metadata rides along
/// unchanged. The instruction outputs are discarded.
inline RelayMessage contextualize(const RelayMessage& relay_tokens,
                                  const Eigen::MatrixXd& instruction_tokens,
                                  const RelayBlock& block) {
    relay_tokens.validate();
    if (relay_tokens.empty()) return relay_tokens;
    const auto dim = static_cast<Eigen::Index>(block.config().model_dim);
    if (relay_tokens.embeddings.cols() != dim || instruction_tokens.cols() != dim)
        throw std::invalid_argument("relay/instruction dims do not match the block");
    const auto n = relay_tokens.embeddings.rows();
    Eigen::MatrixXd stacked(n + instruction_tokens.rows(), dim);
    stacked.topRows(n) = relay_tokens.embeddings;
    stacked.bottomRows(instruction_tokens.rows()) = instruction_tokens;
    RelayMessage out = relay_tokens;
    out.embeddings = block.apply(stacked).topRows(n);
    return out;
}

/// Inserts the message between the vision and instruction segments. Relay
/// tokens keep the position ids of their source tokens (positional reuse);
/// every other token keeps its own fresh enumeration, so an empty message
/// returns the sequence bit-identically.
inline TokenSequence inject_relay(const TokenSequence& seq, const RelayMessage& msg) {
    seq.validate();
    msg.validate();
    if (msg.empty()) return seq;
    if (msg.embeddings.cols() != seq.embeddings.cols())
        throw std::invalid_argument("relay message dim does not match sequence dim");
    if (seq.count_of(TokenType::Relay) > 0)
        throw std::invalid_argument("sequence already carries relay tokens");

    std::size_t insert_at = 0;
    for (std::size_t i = 0; i < seq.size(); ++i)
        if (seq.tags[i] == TokenType::Vision) insert_at = i + 1;

    const auto n = seq.size();
    const auto m = msg.size();
    TokenSequence out;
    out.embeddings.resize(static_cast<Eigen::Index>(n + m), seq.embeddings.cols());
    out.tags.reserve(n + m);
    out.positions.reserve(n + m);
    out.grid.reserve(n + m);
    out.token_ids.reserve(n + m);
    auto copy_token = [&](std::size_t src) {
        out.embeddings.row(static_cast<Eigen::Index>(out.tags.size())) =
            seq.embeddings.row(static_cast<Eigen::Index>(src));
        out.tags.push_back(seq.tags[src]);
        out.positions.push_back(seq.positions[src]);
        out.grid.push_back(seq.grid[src]);
        out.token_ids.push_back(seq.token_ids[src]);
    };
    for (std::size_t i = 0; i < insert_at; ++i) copy_token(i);
    for (std::size_t r = 0; r < m; ++r) {
        out.embeddings.row(static_cast<Eigen::Index>(out.tags.size())) =
            msg.embeddings.row(static_cast<Eigen::Index>(r));
        out.tags.push_back(TokenType::Relay);
        out.positions.push_back(msg.source_positions[r]);
        out.grid.push_back(msg.source_grid[r]);
        out.token_ids.push_back(-1);
    }
    for (std::size_t i = insert_at; i < n; ++i) copy_token(i);
    out.validate();
    return out;
}

/// Concatenates messages in ascending source-agent order. When the total
/// exceeds the cap, tokens are kept round-robin across sources (grouping by
/// source is preserved in the output).
inline RelayMessage merge_messages(std::vector<RelayMessage> messages, std::size_t cap) {
    for (const auto& m : messages) m.validate();
    std::stable_sort(messages.begin(), messages.end(),
                     [](const RelayMessage& a, const RelayMessage& b) {
                         return a.source_agent < b.source_agent;
                     });
    std::size_t total = 0;
    for (const auto& m : messages) total += m.size();

    std::vector<std::vector<std::size_t>> keep(messages.size());
    if (total <= cap) {
        for (std::size_t i = 0; i < messages.size(); ++i)
            for (std::size_t r = 0; r < messages[i].size(); ++r) keep[i].push_back(r);
    } else {
        std::size_t kept = 0;
        for (std::size_t round = 0; kept < cap; ++round) {
            bool any = false;
            for (std::size_t i = 0; i < messages.size() && kept < cap; ++i) {
                if (round < messages[i].size()) {
                    keep[i].push_back(round);
                    ++kept;
                    any = true;
                }
            }
            if (!any) break;
        }
    }

    std::size_t out_n = 0;
    for (const auto& k : keep) out_n += k.size();
    Eigen::Index dim = 0;
    for (const auto& m : messages)
        if (m.size() > 0) dim = m.embeddings.cols();
    RelayMessage out;
    out.embeddings.resize(static_cast<Eigen::Index>(out_n), dim);
    out.source_positions.reserve(out_n);
    out.source_grid.reserve(out_n);
    out.source_agent = messages.size() == 1 ? messages.front().source_agent : kMergedSourceAgent;
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < messages.size(); ++i) {
        for (std::size_t r : keep[i]) {
            out.embeddings.row(row++) = messages[i].embeddings.row(static_cast<Eigen::Index>(r));
            out.source_positions.push_back(messages[i].source_positions[r]);
            out.source_grid.push_back(messages[i].source_grid[r]);
        }
    }
    return out;
}

/// Binary frame: int32 source agent id, uint32 n, uint32 dim, then n*dim
/// row-major float32 embeddings; little-endian throughout. Spatial metadata
/// is not part of the frame.
inline void write_relay_frame(const RelayMessage& msg, std::ostream& os) {
    msg.validate();
    auto put_u32 = [&os](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<std::uint32_t>(msg.source_agent));
    put_u32(static_cast<std::uint32_t>(msg.size()));
    put_u32(static_cast<std::uint32_t>(msg.embeddings.cols()));
    for (Eigen::Index r = 0; r < msg.embeddings.rows(); ++r)
        for (Eigen::Index c = 0; c < msg.embeddings.cols(); ++c) {
            const auto f = static_cast<float>(msg.embeddings(r, c));
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(bits);
        }
}

inline RelayMessage read_relay_frame(std::istream& is) {
    auto get_u32 = [&is]() {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) throw std::runtime_error("truncated relay frame");
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    RelayMessage msg;
    msg.source_agent = static_cast<std::int32_t>(get_u32());
    const std::uint32_t n = get_u32();
    const std::uint32_t dim = get_u32();
    msg.embeddings.resize(n, dim);
    for (std::uint32_t r = 0; r < n; ++r)
        for (std::uint32_t c = 0; c < dim; ++c) {
            const std::uint32_t bits = get_u32();
            float f;
            std::memcpy(&f, &bits, 4);
            msg.embeddings(r, c) = f;
        }
    msg.source_positions.assign(n, 0);
    msg.source_grid.assign(n, GridCoord{0, 0});
    return msg;
}

}  // namespace vif
