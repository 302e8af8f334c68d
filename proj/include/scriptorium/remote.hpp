#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scriptorium/scorer.hpp"

namespace httplib {
class Server;
}

namespace scriptorium {

// JSON bodies of the scorer HTTP protocol.
//
//   POST /v1/score      {text, mask_spans, top_k, candidates?}
//                       -> {model_id, consecutive_mask_model, per_mask, tail_logmass, candidates}
//   POST /v1/attention  {text} -> {tokenization, layers, heads, weights}
//   GET  /v1/info       -> {model_id, vocab_size, context_limit, mask_models, layers, heads, attention_heads}
//
// `text` is the token pieces joined by single spaces with "[MASK]" for each
// mask; `mask_spans` are the [start, end) byte ranges of those "[MASK]" units.
// per_mask[j] and candidates[j] are lists of {token, logprob} for mask j;
// tail_logmass[j] is null when the top list holds all of the mass.
namespace protocol {

inline constexpr std::string_view kMaskText = "[MASK]";

struct ScoredPiece {
    std::string token;
    double logprob = 0.0;

    bool operator==(const ScoredPiece&) const = default;
};

struct ScoreRequest {
    std::string text;
    std::vector<std::pair<std::size_t, std::size_t>> mask_spans;
    std::size_t top_k = 10;
    std::optional<std::vector<std::string>> candidates;
};

struct ScoreReply {
    std::string model_id;
    int consecutive_mask_model = 1;
    std::vector<std::vector<ScoredPiece>> per_mask;
    std::vector<double> tail_logmass;  // -inf encodes as null
    std::vector<std::vector<ScoredPiece>> candidates;
};

struct InfoReply {
    std::string model_id;
    std::size_t vocab_size = 0;
    std::size_t context_limit = 0;
    std::vector<int> mask_models;
    std::size_t layers = 0;
    std::size_t heads = 0;  // per layer
};

struct AttentionRequest {
    std::string text;
};

struct AttentionReply {
    std::vector<std::string> tokenization;
    AttentionTensor tensor;
};

// encode/decode are exact inverses on canonical bodies: decode throws
// TransportError on malformed JSON or missing fields.
std::string encode(const ScoreRequest& r);
std::string encode(const ScoreReply& r);
std::string encode(const InfoReply& r);
std::string encode(const AttentionRequest& r);
std::string encode(const AttentionReply& r);
ScoreRequest decode_score_request(std::string_view body);
ScoreReply decode_score_reply(std::string_view body);
InfoReply decode_info(std::string_view body);
AttentionRequest decode_attention_request(std::string_view body);
AttentionReply decode_attention_reply(std::string_view body);

std::string render_tokens(const Tokenizer& tok, std::span<const TokenId> tokens);
// Inverse of render_tokens; unknown pieces map to UNK. Throws ProtocolError(400)
// when mask_spans disagree with the "[MASK]" units in the text.
std::vector<TokenId> parse_tokens(const Tokenizer& tok, std::string_view text,
                                  std::span<const std::pair<std::size_t, std::size_t>> mask_spans);

ScoreRequest to_request(const Tokenizer& tok, const MaskQuery& q);
MaskQuery from_request(const Tokenizer& tok, const ScoreRequest& r);
ScoreReply to_reply(const Tokenizer& tok, const MaskResponse& r);
MaskResponse from_reply(const Tokenizer& tok, const ScoreReply& r);

}  // namespace protocol

// Client for a scorer service. The local tokenizer must share the service's
// vocabulary; pieces travel as strings. Construction fetches /v1/info and
// throws TransportError when the service cannot be reached.
class RemoteScorer final : public ScorerBackend {
public:
    RemoteScorer(std::string base_url, std::shared_ptr<const Tokenizer> tokenizer,
                 std::chrono::milliseconds timeout = std::chrono::seconds(30));

    const Tokenizer& tokenizer() const override { return *tokenizer_; }
    std::size_t context_limit() const override { return info_.context_limit; }
    std::string model_id() const override { return info_.model_id; }
    std::vector<int> mask_models() const override { return info_.mask_models; }
    MaskResponse score(const MaskQuery& query) const override;
    bool supports_attention() const override { return info_.layers > 0; }
    AttentionTensor attention(std::span<const TokenId> tokens) const override;
    std::pair<std::size_t, std::size_t> attention_shape() const override { return {info_.layers, info_.heads}; }

    const protocol::InfoReply& info() const { return info_; }

private:
    std::string post(const std::string& path, const std::string& body) const;

    std::string base_url_;
    std::shared_ptr<const Tokenizer> tokenizer_;
    std::chrono::milliseconds timeout_;
    protocol::InfoReply info_;
};

// Serves `backend` under /v1/score, /v1/attention and /v1/info. Oversized
// contexts answer 413, malformed requests 400, missing attention 501.
void mount_scorer_routes(httplib::Server& server, std::shared_ptr<const ScorerBackend> backend);

}  // namespace scriptorium
