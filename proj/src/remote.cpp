#include "scriptorium/remote.hpp"

#include <cmath>
#include <limits>

#include "httplib.h"
#include "json.hpp"
#include "scriptorium/errors.hpp"

namespace scriptorium {

using json = nlohmann::ordered_json;

namespace protocol {

namespace {

json parse_body(std::string_view body) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed JSON body: ") + e.what());
    }
}

template <typename T>
T field(const json& j, const char* name) {
    if (!j.is_object() || !j.contains(name)) throw TransportError(std::string("missing field '") + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("bad field '") + name + "': " + e.what());
    }
}

json pieces_json(const std::vector<ScoredPiece>& v) {
    json a = json::array();
    for (const auto& p : v) {
        json o;
        o["token"] = p.token;
        if (std::isfinite(p.logprob))
            o["logprob"] = p.logprob;
        else
            o["logprob"] = nullptr;
        a.push_back(std::move(o));
    }
    return a;
}

double logprob_of(const json& v) {
    if (v.is_null()) return -std::numeric_limits<double>::infinity();
    if (!v.is_number()) throw TransportError("logprob is not a number");
    const double x = v.get<double>();
    if (x > 0.0) throw TransportError("positive logprob");
    return x;
}

std::vector<ScoredPiece> pieces_of(const json& a) {
    if (!a.is_array()) throw TransportError("expected an array of scored tokens");
    std::vector<ScoredPiece> out;
    for (const auto& o : a) out.push_back({field<std::string>(o, "token"), logprob_of(o.contains("logprob") ? o["logprob"] : json())});
    return out;
}

std::vector<std::vector<ScoredPiece>> nested_pieces(const json& j, const char* name) {
    const auto a = field<json>(j, name);
    if (!a.is_array()) throw TransportError(std::string("'") + name + "' must be an array");
    std::vector<std::vector<ScoredPiece>> out;
    for (const auto& m : a) out.push_back(pieces_of(m));
    return out;
}

}  // namespace

std::string encode(const ScoreRequest& r) {
    json j;
    j["text"] = r.text;
    json spans = json::array();
    for (const auto& [a, b] : r.mask_spans) spans.push_back({a, b});
    j["mask_spans"] = std::move(spans);
    j["top_k"] = r.top_k;
    if (r.candidates) j["candidates"] = *r.candidates;
    return j.dump();
}

std::string encode(const ScoreReply& r) {
    json j;
    j["model_id"] = r.model_id;
    j["consecutive_mask_model"] = r.consecutive_mask_model;
    json per = json::array();
    for (const auto& m : r.per_mask) per.push_back(pieces_json(m));
    j["per_mask"] = std::move(per);
    json tail = json::array();
    for (double t : r.tail_logmass) {
        if (std::isfinite(t))
            tail.push_back(t);
        else
            tail.push_back(nullptr);
    }
    j["tail_logmass"] = std::move(tail);
    json cands = json::array();
    for (const auto& m : r.candidates) cands.push_back(pieces_json(m));
    j["candidates"] = std::move(cands);
    return j.dump();
}

std::string encode(const InfoReply& r) {
    json j;
    j["model_id"] = r.model_id;
    j["vocab_size"] = r.vocab_size;
    j["context_limit"] = r.context_limit;
    j["mask_models"] = r.mask_models;
    j["layers"] = r.layers;
    j["heads"] = r.heads;
    j["attention_heads"] = r.layers * r.heads;
    return j.dump();
}

std::string encode(const AttentionRequest& r) {
    json j;
    j["text"] = r.text;
    return j.dump();
}

std::string encode(const AttentionReply& r) {
    const auto& t = r.tensor;
    json j;
    j["tokenization"] = r.tokenization;
    j["layers"] = t.layers;
    j["heads"] = t.heads;
    json layers = json::array();
    for (std::size_t l = 0; l < t.layers; ++l) {
        json heads = json::array();
        for (std::size_t h = 0; h < t.heads; ++h) {
            json rows = json::array();
            for (std::size_t i = 0; i < t.size; ++i) {
                const auto* row = &t.weights[t.offset(l, h, i, 0)];
                rows.push_back(std::vector<double>(row, row + t.size));
            }
            heads.push_back(std::move(rows));
        }
        layers.push_back(std::move(heads));
    }
    j["weights"] = std::move(layers);
    return j.dump();
}

ScoreRequest decode_score_request(std::string_view body) {
    const json j = parse_body(body);
    ScoreRequest r;
    r.text = field<std::string>(j, "text");
    for (const auto& s : field<json>(j, "mask_spans")) {
        if (!s.is_array() || s.size() != 2) throw TransportError("mask span must be [start, end]");
        r.mask_spans.emplace_back(s[0].get<std::size_t>(), s[1].get<std::size_t>());
    }
    r.top_k = field<std::size_t>(j, "top_k");
    if (j.contains("candidates")) r.candidates = field<std::vector<std::string>>(j, "candidates");
    return r;
}

ScoreReply decode_score_reply(std::string_view body) {
    const json j = parse_body(body);
    ScoreReply r;
    r.model_id = field<std::string>(j, "model_id");
    r.consecutive_mask_model = field<int>(j, "consecutive_mask_model");
    r.per_mask = nested_pieces(j, "per_mask");
    for (const auto& t : field<json>(j, "tail_logmass")) r.tail_logmass.push_back(logprob_of(t));
    r.candidates = nested_pieces(j, "candidates");
    if (r.tail_logmass.size() != r.per_mask.size() || r.candidates.size() != r.per_mask.size())
        throw TransportError("per-mask arrays differ in length");
    return r;
}

InfoReply decode_info(std::string_view body) {
    const json j = parse_body(body);
    InfoReply r;
    r.model_id = field<std::string>(j, "model_id");
    r.vocab_size = field<std::size_t>(j, "vocab_size");
    r.context_limit = field<std::size_t>(j, "context_limit");
    r.mask_models = field<std::vector<int>>(j, "mask_models");
    r.layers = field<std::size_t>(j, "layers");
    r.heads = field<std::size_t>(j, "heads");
    if (field<std::size_t>(j, "attention_heads") != r.layers * r.heads) throw TransportError("attention_heads != layers * heads");
    return r;
}

AttentionRequest decode_attention_request(std::string_view body) { return {field<std::string>(parse_body(body), "text")}; }

AttentionReply decode_attention_reply(std::string_view body) {
    const json j = parse_body(body);
    AttentionReply r;
    r.tokenization = field<std::vector<std::string>>(j, "tokenization");
    const auto layers = field<std::size_t>(j, "layers");
    const auto heads = field<std::size_t>(j, "heads");
    const auto n = r.tokenization.size();
    r.tensor = AttentionTensor(layers, heads, n);
    const auto w = field<json>(j, "weights");
    if (w.size() != layers) throw TransportError("weights: wrong layer count");
    for (std::size_t l = 0; l < layers; ++l) {
        if (w[l].size() != heads) throw TransportError("weights: wrong head count");
        for (std::size_t h = 0; h < heads; ++h) {
            if (w[l][h].size() != n) throw TransportError("weights: wrong row count");
            for (std::size_t i = 0; i < n; ++i) {
                const auto& row = w[l][h][i];
                if (row.size() != n) throw TransportError("weights: wrong column count");
                for (std::size_t k = 0; k < n; ++k) r.tensor.at(l, h, i, k) = row[k].get<double>();
            }
        }
    }
    return r;
}

std::string render_tokens(const Tokenizer& tok, std::span<const TokenId> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        if (tokens[i] == Vocabulary::kMask)
            out += kMaskText;
        else
            out += tok.vocab().piece(tokens[i]);
    }
    return out;
}

std::vector<TokenId> parse_tokens(const Tokenizer& tok, std::string_view text,
                                  std::span<const std::pair<std::size_t, std::size_t>> mask_spans) {
    std::vector<TokenId> out;
    std::vector<std::pair<std::size_t, std::size_t>> found;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find(' ', start);
        if (end == std::string_view::npos) end = text.size();
        if (end == start) throw ProtocolError(400, "empty token at byte " + std::to_string(start));
        const auto piece = text.substr(start, end - start);
        if (piece == kMaskText) {
            out.push_back(Vocabulary::kMask);
            found.emplace_back(start, end);
        } else {
            out.push_back(tok.vocab().lookup(piece));
        }
        start = end + 1;
    }
    if (!std::equal(found.begin(), found.end(), mask_spans.begin(), mask_spans.end()))
        throw ProtocolError(400, "mask_spans do not match the [MASK] units of text");
    return out;
}

ScoreRequest to_request(const Tokenizer& tok, const MaskQuery& q) {
    ScoreRequest r;
    r.text = render_tokens(tok, q.tokens);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < q.tokens.size(); ++i) {
        const std::size_t len = q.tokens[i] == Vocabulary::kMask ? kMaskText.size() : tok.vocab().piece(q.tokens[i]).size();
        if (q.tokens[i] == Vocabulary::kMask) r.mask_spans.emplace_back(offset, offset + len);
        offset += len + 1;
    }
    r.top_k = q.top_k;
    if (!q.candidates.empty()) {
        r.candidates.emplace();
        for (auto c : q.candidates) r.candidates->push_back(tok.vocab().piece(c));
    }
    return r;
}

MaskQuery from_request(const Tokenizer& tok, const ScoreRequest& r) {
    MaskQuery q;
    q.tokens = parse_tokens(tok, r.text, r.mask_spans);
    q.top_k = r.top_k;
    if (r.candidates)
        for (const auto& c : *r.candidates) {
            const auto id = tok.vocab().find(c);
            if (!id || *id < Vocabulary::kFirstPredictable) throw ProtocolError(400, "unknown candidate '" + c + "'");
            q.candidates.push_back(*id);
        }
    return q;
}

ScoreReply to_reply(const Tokenizer& tok, const MaskResponse& r) {
    ScoreReply out;
    out.model_id = r.model_id;
    out.consecutive_mask_model = r.consecutive_mask_model;
    auto convert = [&](const std::vector<ScoredToken>& v) {
        std::vector<ScoredPiece> p;
        for (const auto& t : v) p.push_back({tok.vocab().piece(t.token), t.logprob});
        return p;
    };
    for (const auto& m : r.per_mask) {
        out.per_mask.push_back(convert(m.top));
        out.tail_logmass.push_back(m.tail_logmass);
        out.candidates.push_back(convert(m.candidates));
    }
    return out;
}

MaskResponse from_reply(const Tokenizer& tok, const ScoreReply& r) {
    MaskResponse out;
    out.model_id = r.model_id;
    out.consecutive_mask_model = r.consecutive_mask_model;
    auto convert = [&](const std::vector<ScoredPiece>& v) {
        std::vector<ScoredToken> t;
        for (const auto& p : v) {
            const auto id = tok.vocab().find(p.token);
            if (!id) throw TransportError("service returned token '" + p.token + "' missing from the local vocabulary");
            t.push_back({*id, p.logprob});
        }
        return t;
    };
    for (std::size_t j = 0; j < r.per_mask.size(); ++j)
        out.per_mask.push_back({convert(r.per_mask[j]), convert(r.candidates.at(j)), r.tail_logmass.at(j)});
    return out;
}

}  // namespace protocol

namespace {

std::unique_ptr<httplib::Client> make_client(const std::string& base_url, std::chrono::milliseconds timeout) {
    auto cli = std::make_unique<httplib::Client>(base_url);
    if (!cli->is_valid()) throw TransportError("invalid scorer URL '" + base_url + "'");
    cli->set_connection_timeout(timeout);
    cli->set_read_timeout(timeout);
    cli->set_write_timeout(timeout);
    return cli;
}

void check_status(const httplib::Result& res, const std::string& what) {
    if (!res) throw TransportError(what + ": " + httplib::to_string(res.error()));
    if (res->status == 413) throw TruncationError(what + ": " + res->body);
    if (res->status == 501) throw CapabilityError(what + ": " + res->body);
    if (res->status != 200) throw TransportError(what + ": HTTP " + std::to_string(res->status) + " " + res->body);
}

}  // namespace

RemoteScorer::RemoteScorer(std::string base_url, std::shared_ptr<const Tokenizer> tokenizer, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), tokenizer_(std::move(tokenizer)), timeout_(timeout) {
    auto cli = make_client(base_url_, timeout_);
    const auto res = cli->Get("/v1/info");
    check_status(res, "GET /v1/info");
    info_ = protocol::decode_info(res->body);
    if (info_.vocab_size != tokenizer_->vocab().size())
        throw TransportError("service vocabulary has " + std::to_string(info_.vocab_size) + " entries, local has " +
                             std::to_string(tokenizer_->vocab().size()));
}

std::string RemoteScorer::post(const std::string& path, const std::string& body) const {
    // httplib clients are not shareable across threads; one per call.
    auto cli = make_client(base_url_, timeout_);
    const auto res = cli->Post(path, body, "application/json");
    check_status(res, "POST " + path);
    return res->body;
}

MaskResponse RemoteScorer::score(const MaskQuery& query) const {
    if (query.tokens.size() > context_limit()) throw TruncationError("context exceeds the service limit");
    const auto body = post("/v1/score", protocol::encode(protocol::to_request(*tokenizer_, query)));
    return protocol::from_reply(*tokenizer_, protocol::decode_score_reply(body));
}

AttentionTensor RemoteScorer::attention(std::span<const TokenId> tokens) const {
    if (!supports_attention()) return ScorerBackend::attention(tokens);
    const auto body = post("/v1/attention", protocol::encode(protocol::AttentionRequest{protocol::render_tokens(*tokenizer_, tokens)}));
    auto reply = protocol::decode_attention_reply(body);
    if (reply.tokenization.size() != tokens.size()) throw TransportError("attention tokenization length differs");
    return std::move(reply.tensor);
}

void mount_scorer_routes(httplib::Server& server, std::shared_ptr<const ScorerBackend> backend) {
    auto guarded = [](auto fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                res.set_content(fn(req), "application/json");
                res.status = 200;
            } catch (const TruncationError& e) {
                res.status = 413;
                res.set_content(e.what(), "text/plain");
            } catch (const ProtocolError& e) {
                res.status = e.status;
                res.set_content(e.what(), "text/plain");
            } catch (const CapabilityError& e) {
                res.status = 501;
                res.set_content(e.what(), "text/plain");
            } catch (const TransportError& e) {
                res.status = 400;
                res.set_content(e.what(), "text/plain");
            } catch (const std::invalid_argument& e) {
                res.status = 400;
                res.set_content(e.what(), "text/plain");
            } catch (const std::exception& e) {
                res.status = 500;
                res.set_content(e.what(), "text/plain");
            }
        };
    };
    server.Get("/v1/info", guarded([backend](const httplib::Request&) {
        protocol::InfoReply info;
        info.model_id = backend->model_id();
        info.vocab_size = backend->tokenizer().vocab().size();
        info.context_limit = backend->context_limit();
        info.mask_models = backend->mask_models();
        std::tie(info.layers, info.heads) = backend->attention_shape();
        return protocol::encode(info);
    }));
    server.Post("/v1/score", guarded([backend](const httplib::Request& req) {
        const auto q = protocol::from_request(backend->tokenizer(), protocol::decode_score_request(req.body));
        if (q.tokens.size() > backend->context_limit())
            throw TruncationError(std::to_string(q.tokens.size()) + " tokens exceed the limit of " +
                                  std::to_string(backend->context_limit()));
        if (q.top_k == 0) throw ProtocolError(400, "top_k must be >= 1");
        return protocol::encode(protocol::to_reply(backend->tokenizer(), backend->score(q)));
    }));
    server.Post("/v1/attention", guarded([backend](const httplib::Request& req) {
        const auto r = protocol::decode_attention_request(req.body);
        const auto tokens = protocol::parse_tokens(backend->tokenizer(), r.text, {});
        if (tokens.size() > backend->context_limit()) throw TruncationError("input exceeds the context limit");
        protocol::AttentionReply reply;
        for (auto t : tokens) reply.tokenization.push_back(backend->tokenizer().vocab().piece(t));
        reply.tensor = backend->attention(tokens);
        return protocol::encode(reply);
    }));
}

}  // namespace scriptorium
