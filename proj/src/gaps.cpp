#include "scriptorium/gaps.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "scriptorium/corpus.hpp"
#include "scriptorium/errors.hpp"

namespace scriptorium {

using json = nlohmann::ordered_json;

std::vector<std::size_t> GapTask::candidate_counts() const {
    std::vector<std::size_t> out(n_chars / 2 + 2);
    std::iota(out.begin(), out.end(), 1);
    return out;
}

GapTask make_gap_task(std::string id, NormalizedText text, WordRange gap) {
    GapTask t;
    t.n_chars = count_gap_characters(gap, text);
    if (gap.empty() || t.n_chars < kMinGapChars || t.n_chars > kMaxGapChars)
        throw std::invalid_argument("gap of " + std::to_string(t.n_chars) + " characters is outside [3, 10]");
    t.id = std::move(id);
    t.text = std::move(text);
    t.gap = gap;
    return t;
}

std::pair<std::size_t, std::size_t> gap_token_range(const Tokenization& tokens, WordRange gap) {
    if (gap.empty() || gap.last > tokens.word_first_token.size()) throw std::out_of_range("gap outside the text");
    const std::size_t first = tokens.word_first_token[gap.first];
    const std::size_t last = tokens.word_first_token[gap.last - 1] + tokens.word_token_count[gap.last - 1];
    return {first, last};
}

std::size_t gap_token_count(const Tokenization& tokens, WordRange gap) {
    const auto [a, b] = gap_token_range(tokens, gap);
    return b - a;
}

std::string gap_truth(const Tokenizer& tok, const Tokenization& tokens, WordRange gap) {
    const auto [a, b] = gap_token_range(tokens, gap);
    return tok.join(std::span(tokens.tokens).subspan(a, b - a));
}

GapAnalysis analyze_gap(const ScorerBackend& backend, const GapTask& task, const GapOptions& options) {
    GapAnalysis out;
    const Tokenization tokens = backend.tokenizer().tokenize(task.text);
    const auto [first, last] = gap_token_range(tokens, task.gap);
    const std::size_t limit = backend.context_limit();
    for (std::size_t m : task.candidate_counts()) {
        if (m > kMaxGapTokens) break;
        if (m >= limit) throw TruncationError("gap needs more masks than the context holds");
        ContextWindow w{0, tokens.size()};
        if (tokens.size() - (last - first) + m > limit) w = choose_window(tokens, first, last, limit - m + (last - first));
        const auto ctx = replace_with_masks(std::span(tokens.tokens).subspan(w.begin, w.end - w.begin), first - w.begin,
                                            last - w.begin, m);
        auto& row = out.hypotheses[m - 1];
        try {
            row = beam_search(backend, ctx, {std::max(options.beam_width, kTopProbabilities), FillOrder::left_to_right});
        } catch (const TransportError& e) {
            out.warnings.push_back("beam search with " + std::to_string(m) + " masks failed: " + e.what());
            row.clear();
        }
        double total = 0.0;
        for (std::size_t j = 0; j < row.size() && j < kTopProbabilities; ++j) total += std::exp(row[j].logprob);
        for (std::size_t j = 0; j < row.size() && j < kTopProbabilities; ++j) {
            double p = std::exp(row[j].logprob);
            if (options.normalize_rows && total > 0.0) p /= total;
            out.features[(m - 1) * kTopProbabilities + j] = p;
        }
    }
    out.features[kMaxGapTokens * kTopProbabilities + (task.n_chars - kMinGapChars)] = 1.0;
    return out;
}

TokCountNet::TokCountNet(std::size_t input, std::size_t hidden, std::size_t output, Pcg32& rng)
    : w1(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(input)),
      w2(static_cast<Eigen::Index>(output), static_cast<Eigen::Index>(hidden)),
      b1(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden))),
      b2(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(output))) {
    // He-uniform initialization.
    const double a1 = std::sqrt(6.0 / static_cast<double>(input));
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden));
    for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = (2.0 * rng.uniform() - 1.0) * a1;
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = (2.0 * rng.uniform() - 1.0) * a2;
}

namespace {

Eigen::MatrixXd softmax_columns(Eigen::MatrixXd z) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        auto col = z.col(c);
        col.array() -= col.maxCoeff();
        col = col.array().exp().matrix();
        col /= col.sum();
    }
    return z;
}

Eigen::MatrixXd to_matrix(const std::vector<TrainingExample>& examples, std::span<const std::size_t> rows) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(kFeatureDim), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t c = 0; c < rows.size(); ++c)
        for (std::size_t i = 0; i < kFeatureDim; ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = examples[rows[c]].features[i];
    return x;
}

}  // namespace

Eigen::VectorXd TokCountNet::forward(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd h = (w1 * x + b1).cwiseMax(0.0);
    return softmax_columns(w2 * h + b2);
}

std::array<double, kMaxGapTokens> TokCountNet::posterior(const GapFeatures& f) const {
    const Eigen::VectorXd out = forward(Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size())));
    std::array<double, kMaxGapTokens> p{};
    for (std::size_t i = 0; i < kMaxGapTokens && i < static_cast<std::size_t>(out.size()); ++i) p[i] = out(static_cast<Eigen::Index>(i));
    return p;
}

double TokCountNet::loss(const Eigen::MatrixXd& x, const std::vector<std::size_t>& labels) const {
    const Eigen::MatrixXd h = ((w1 * x).colwise() + b1).cwiseMax(0.0);
    const Eigen::MatrixXd p = softmax_columns((w2 * h).colwise() + b2);
    double total = 0.0;
    for (std::size_t c = 0; c < labels.size(); ++c) total -= std::log(p(static_cast<Eigen::Index>(labels[c]), static_cast<Eigen::Index>(c)));
    return total / static_cast<double>(labels.size());
}

TokCountNet::Gradients TokCountNet::gradients(const Eigen::MatrixXd& x, const std::vector<std::size_t>& labels) const {
    const Eigen::MatrixXd pre = (w1 * x).colwise() + b1;
    const Eigen::MatrixXd h = pre.cwiseMax(0.0);
    Eigen::MatrixXd d2 = softmax_columns((w2 * h).colwise() + b2);
    for (std::size_t c = 0; c < labels.size(); ++c) d2(static_cast<Eigen::Index>(labels[c]), static_cast<Eigen::Index>(c)) -= 1.0;
    d2 /= static_cast<double>(labels.size());
    Gradients g;
    g.w2 = d2 * h.transpose();
    g.b2 = d2.rowwise().sum();
    const Eigen::MatrixXd d1 = (w2.transpose() * d2).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    g.w1 = d1 * x.transpose();
    g.b1 = d1.rowwise().sum();
    return g;
}

void TokCountNet::step(const Gradients& g, double lr) {
    w1 -= lr * g.w1;
    b1 -= lr * g.b1;
    w2 -= lr * g.w2;
    b2 -= lr * g.b2;
}

std::vector<double> TokCountNet::parameters() const {
    std::vector<double> p;
    p.reserve(static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size()));
    for (Eigen::Index r = 0; r < w1.rows(); ++r)
        for (Eigen::Index c = 0; c < w1.cols(); ++c) p.push_back(w1(r, c));
    for (Eigen::Index i = 0; i < b1.size(); ++i) p.push_back(b1(i));
    for (Eigen::Index r = 0; r < w2.rows(); ++r)
        for (Eigen::Index c = 0; c < w2.cols(); ++c) p.push_back(w2(r, c));
    for (Eigen::Index i = 0; i < b2.size(); ++i) p.push_back(b2(i));
    return p;
}

void TokCountNet::set_parameters(const std::vector<double>& p) {
    if (p.size() != static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size()))
        throw std::invalid_argument("parameter count mismatch");
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < w1.rows(); ++r)
        for (Eigen::Index c = 0; c < w1.cols(); ++c) w1(r, c) = p[k++];
    for (Eigen::Index i = 0; i < b1.size(); ++i) b1(i) = p[k++];
    for (Eigen::Index r = 0; r < w2.rows(); ++r)
        for (Eigen::Index c = 0; c < w2.cols(); ++c) w2(r, c) = p[k++];
    for (Eigen::Index i = 0; i < b2.size(); ++i) b2(i) = p[k++];
}

namespace {

constexpr char kMagic[4] = {'T', 'C', 'N', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)])) << (8 * i);
    return v;
}

}  // namespace

std::string TokCountNet::serialize() const {
    std::string out(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(input_dim()));
    put_u32(out, static_cast<std::uint32_t>(hidden_dim()));
    put_u32(out, static_cast<std::uint32_t>(output_dim()));
    for (double v : parameters()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

TokCountNet TokCountNet::deserialize(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IngestionError("not a token-count net file", 0);
    const std::size_t in = get_u32(bytes, 4);
    const std::size_t hid = get_u32(bytes, 8);
    const std::size_t outd = get_u32(bytes, 12);
    const std::size_t n = hid * in + hid + outd * hid + outd;
    if (bytes.size() != 16 + 4 * n) throw IngestionError("token-count net file has the wrong size", bytes.size());
    TokCountNet net;
    net.w1.resize(static_cast<Eigen::Index>(hid), static_cast<Eigen::Index>(in));
    net.b1.resize(static_cast<Eigen::Index>(hid));
    net.w2.resize(static_cast<Eigen::Index>(outd), static_cast<Eigen::Index>(hid));
    net.b2.resize(static_cast<Eigen::Index>(outd));
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = std::bit_cast<float>(get_u32(bytes, 16 + 4 * i));
    net.set_parameters(p);
    return net;
}

void TokCountNet::save(const std::filesystem::path& path) const { write_file(path, serialize()); }
TokCountNet TokCountNet::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

TrainResult train_tokcount_net(const std::vector<TrainingExample>& examples, const TrainOptions& options) {
    if (examples.empty()) throw std::invalid_argument("no training examples");
    Pcg32 rng(options.seed);
    TrainResult result;
    result.net = TokCountNet(kFeatureDim, options.hidden, kMaxGapTokens, rng);
    std::vector<std::size_t> all(examples.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> labels;
    for (const auto& e : examples) {
        if (e.count < 1 || e.count > kMaxGapTokens) throw std::invalid_argument("token count label outside [1, 7]");
        labels.push_back(e.count - 1);
    }
    result.single_class = std::all_of(labels.begin(), labels.end(), [&](std::size_t l) { return l == labels[0]; });
    const Eigen::MatrixXd full = to_matrix(examples, all);
    result.epoch_loss.push_back(result.net.loss(full, labels));

    std::vector<std::size_t> order = all;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint32_t>(i + 1))]);
        for (std::size_t start = 0; start < order.size(); start += options.batch) {
            const std::size_t end = std::min(order.size(), start + options.batch);
            const std::span<const std::size_t> rows(order.data() + start, end - start);
            std::vector<std::size_t> batch_labels;
            for (auto r : rows) batch_labels.push_back(labels[r]);
            result.net.step(result.net.gradients(to_matrix(examples, rows), batch_labels), options.learning_rate);
        }
        result.epoch_loss.push_back(result.net.loss(full, labels));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto p = result.net.posterior(examples[i].features);
        correct += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == labels[i] ? 1 : 0;
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    return result;
}

GapPrediction predict_gap(const GapAnalysis& analysis, const TokCountNet& net, const GapTask& task, std::size_t top_k) {
    GapPrediction p;
    p.gap_id = task.id;
    p.n_chars = task.n_chars;
    p.posterior = net.posterior(analysis.features);
    std::map<std::string, RankedSpan> best;
    for (std::size_t m = 1; m <= kMaxGapTokens; ++m) {
        const double count_lp = std::log(p.posterior[m - 1]);
        for (const auto& h : analysis.hypotheses[m - 1]) {
            RankedSpan s{h.detokenized, m, h.logprob, count_lp, h.logprob + count_lp};
            const std::size_t len = count_letters(h.detokenized);
            if (len == task.n_chars) {
                auto [it, fresh] = best.emplace(s.text, s);
                if (!fresh && s.score > it->second.score) it->second = s;
            } else if (len + 1 == task.n_chars || len == task.n_chars + 1) {
                p.near_misses.push_back(s);
            }
        }
    }
    for (auto& [text, s] : best) p.spans.push_back(std::move(s));
    auto by_score = [](const RankedSpan& a, const RankedSpan& b) { return a.score != b.score ? a.score > b.score : a.text < b.text; };
    std::sort(p.spans.begin(), p.spans.end(), by_score);
    std::sort(p.near_misses.begin(), p.near_misses.end(), by_score);
    if (p.spans.size() > top_k) p.spans.resize(top_k);
    if (p.near_misses.size() > top_k) p.near_misses.resize(top_k);
    if (p.spans.empty()) {
        p.diagnostic = "no hypothesis has " + std::to_string(task.n_chars) + " characters";
        if (!p.near_misses.empty()) {
            p.diagnostic += "; nearest:";
            for (const auto& s : p.near_misses) p.diagnostic += " '" + s.text + "' (" + std::to_string(count_letters(s.text)) + ")";
        }
    }
    return p;
}

std::size_t hit_rank(const GapPrediction& p, const std::string& truth) {
    for (std::size_t i = 0; i < p.spans.size(); ++i)
        if (p.spans[i].text == truth) return i + 1;
    return 0;
}

std::string gap_report_line(const GapPrediction& p, const std::optional<std::string>& truth) {
    json j;
    j["gap_id"] = p.gap_id;
    j["n_chars"] = p.n_chars;
    j["posterior"] = p.posterior;
    json spans = json::array();
    for (const auto& s : p.spans)
        spans.push_back({{"text", s.text}, {"token_count", s.token_count}, {"span_logprob", s.span_logprob},
                         {"count_logprob", s.count_logprob}, {"score", s.score}});
    j["spans"] = std::move(spans);
    if (!p.diagnostic.empty()) j["diagnostic"] = p.diagnostic;
    if (truth) {
        j["ground_truth"] = *truth;
        const std::size_t r = hit_rank(p, *truth);
        if (r)
            j["hit_rank"] = r;
        else
            j["hit_rank"] = nullptr;
    }
    return j.dump();
}

}  // namespace scriptorium
