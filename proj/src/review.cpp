#include "scriptorium/review.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "scriptorium/corpus.hpp"
#include "scriptorium/errors.hpp"
#include "scriptorium/simulate.hpp"
// After Eigen: <resolv.h> defines a macro named _res.
#include "httplib.h"

namespace scriptorium {

using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kRevealed = 10;

std::vector<std::string> lines_of(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);)
        if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
    return out;
}

json parse_json(std::string_view text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad ") + what + ": " + e.what(), 0);
    }
}

// Validates one event and applies it. The caller appends it to the log.
void apply_event(const std::vector<ReviewTask>& tasks, const std::map<std::string, std::size_t>& ids, SessionSnapshot& s,
                 const json& ev) {
    const std::string type = ev.at("type").get<std::string>();
    const std::int64_t t = ev.at("t_ms").get<std::int64_t>();
    ++s.events;
    if (type == "create") {
        s.id = ev.at("session").get<std::string>();
        s.created_ms = t;
        if (ev.at("tasks").get<std::size_t>() != tasks.size()) throw ProtocolError(409, "session was created for a different task list");
        s.tasks.assign(tasks.size(), TaskProgress{});
        return;
    }
    const auto it = ids.find(ev.at("task").get<std::string>());
    if (it == ids.end()) throw ProtocolError(404, "unknown task " + ev.at("task").get<std::string>());
    TaskProgress& p = s.tasks.at(it->second);
    if (type == "open") {
        if (p.opened_ms < 0) p.opened_ms = t;
    } else if (type == "pre_peek") {
        if (p.state != TaskState::unseen) throw ProtocolError(409, "pre-peek answer already recorded for " + it->first);
        p.state = TaskState::pre_peek_submitted;
        p.pre_peek = ev.at("answer").get<std::string>();
        p.pre_peek_ms = t;
        if (p.opened_ms < 0) p.opened_ms = t;
    } else if (type == "reveal") {
        if (p.state != TaskState::pre_peek_submitted)
            throw ProtocolError(409, std::string("cannot reveal in state ") + state_name(p.state));
        p.state = TaskState::revealed;
        p.revealed_ms = t;
    } else if (type == "post_peek") {
        if (p.state != TaskState::revealed)
            throw ProtocolError(409, std::string("post-peek needs revealed suggestions, state is ") + state_name(p.state));
        p.state = TaskState::post_peek_submitted;
        p.post_peek = ev.at("answer").get<std::string>();
        p.post_peek_ms = t;
    } else {
        throw IngestionError("unknown event type " + type, 0);
    }
}

std::map<std::string, std::size_t> index_tasks(const std::vector<ReviewTask>& tasks) {
    std::map<std::string, std::size_t> ids;
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (!ids.emplace(tasks[i].id, i).second) throw IngestionError("duplicate task id " + tasks[i].id, 0);
    return ids;
}

// 1-based rank of the truth among the revealed suggestions, 0 when absent.
std::size_t model_rank(const ReviewTask& t, NormalizationPolicy policy) {
    const std::string truth = canonical_fill(t.truth, policy);
    const std::size_t n = std::min(kRevealed, t.suggestions.size());
    for (std::size_t i = 0; i < n; ++i)
        if (canonical_fill(t.suggestions[i].text, policy) == truth) return i + 1;
    return 0;
}

bool matches(const std::string& answer, const ReviewTask& t, NormalizationPolicy policy) {
    return canonical_fill(answer, policy) == canonical_fill(t.truth, policy);
}

json snapshot_json(const SessionSnapshot& s) {
    json j;
    j["id"] = s.id;
    j["created_ms"] = s.created_ms;
    j["events"] = s.events;
    json tasks = json::array();
    for (const auto& p : s.tasks)
        tasks.push_back({static_cast<int>(p.state), p.pre_peek, p.post_peek, p.opened_ms, p.pre_peek_ms, p.revealed_ms, p.post_peek_ms});
    j["tasks"] = std::move(tasks);
    return j;
}

SessionSnapshot snapshot_from_json(const json& j) {
    SessionSnapshot s;
    s.id = j.at("id").get<std::string>();
    s.created_ms = j.at("created_ms").get<std::int64_t>();
    s.events = j.at("events").get<std::size_t>();
    for (const auto& t : j.at("tasks")) {
        TaskProgress p;
        p.state = static_cast<TaskState>(t.at(0).get<int>());
        p.pre_peek = t.at(1).get<std::string>();
        p.post_peek = t.at(2).get<std::string>();
        p.opened_ms = t.at(3).get<std::int64_t>();
        p.pre_peek_ms = t.at(4).get<std::int64_t>();
        p.revealed_ms = t.at(5).get<std::int64_t>();
        p.post_peek_ms = t.at(6).get<std::int64_t>();
        s.tasks.push_back(std::move(p));
    }
    return s;
}

std::string random_id() {
    std::random_device rd;
    const std::uint64_t v = (std::uint64_t{rd()} << 32) ^ rd();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string answer_of(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception&) {
        throw ProtocolError(400, "body must be JSON");
    }
    if (!j.is_object() || !j.contains("answer") || !j.at("answer").is_string())
        throw ProtocolError(400, "body needs a string \"answer\"");
    return j.at("answer").get<std::string>();
}

}  // namespace

const char* state_name(TaskState s) {
    switch (s) {
        case TaskState::unseen: return "unseen";
        case TaskState::pre_peek_submitted: return "pre_peek_submitted";
        case TaskState::revealed: return "revealed";
        case TaskState::post_peek_submitted: return "post_peek_submitted";
    }
    return "?";
}

std::vector<ReviewTask> load_review_tasks(std::string_view blind_jsonl, std::string_view truth_jsonl,
                                          std::string_view predictions_jsonl) {
    std::map<std::string, json> truth;
    for (const auto& line : lines_of(truth_jsonl)) {
        json j = parse_json(line, "truth line");
        std::string id = j.at("id").get<std::string>();
        truth[id] = std::move(j);
    }
    std::map<std::string, json> predictions;
    for (const auto& line : lines_of(predictions_jsonl)) {
        json j = parse_json(line, "prediction line");
        std::string id = j.at("gap_id").get<std::string>();
        predictions[id] = std::move(j);
    }
    std::vector<ReviewTask> tasks;
    try {
        for (const auto& line : lines_of(blind_jsonl)) {
            const json b = parse_json(line, "blind payload");
            ReviewTask t;
            t.id = b.at("id").get<std::string>();
            t.blind = b.dump();
            const auto tr = truth.find(t.id);
            if (tr == truth.end()) throw IngestionError("no ground truth for task " + t.id, 0);
            t.truth = tr->second.at("words").get<std::string>();
            t.source = tr->second.contains("source") ? tr->second.at("source").get<std::string>()
                                                     : std::to_string(tr->second.at("document").get<std::size_t>());
            const auto pr = predictions.find(t.id);
            if (pr == predictions.end()) throw IngestionError("no prediction for task " + t.id, 0);
            for (const auto& s : pr->second.at("spans")) {
                const double score = s.at("score").get<double>();
                t.suggestions.push_back({s.at("text").get<std::string>(), std::exp(score), score});
            }
            tasks.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad review input: ") + e.what(), 0);
    }
    return tasks;
}

std::vector<ReviewRow> review_rows(const std::vector<ReviewTask>& tasks, const SessionSnapshot& s, NormalizationPolicy policy,
                                   std::size_t* completed) {
    std::size_t n = 0;
    std::size_t top1 = 0, top2 = 0, top10 = 0, pre = 0, post = 0;
    for (std::size_t i = 0; i < tasks.size() && i < s.tasks.size(); ++i) {
        const auto& p = s.tasks[i];
        if (p.state != TaskState::post_peek_submitted) continue;
        ++n;
        const std::size_t r = model_rank(tasks[i], policy);
        top1 += r == 1;
        top2 += r >= 1 && r <= 2;
        top10 += r >= 1 && r <= 10;
        pre += matches(p.pre_peek, tasks[i], policy);
        post += matches(p.post_peek, tasks[i], policy);
    }
    if (completed) *completed = n;
    auto row = [n](const char* name, std::size_t c) {
        return ReviewRow{name, c, n ? static_cast<double>(c) / static_cast<double>(n) : 0.0};
    };
    return {row("Model (top-1)", top1), row("Expert pre-peek", pre), row("Model (top-2)", top2),
            row("Expert post-peek", post), row("Model (top-10)", top10)};
}

std::string render_review_table(const std::vector<ReviewRow>& rows) {
    std::size_t width = 9;  // "Predictor"
    for (const auto& r : rows) width = std::max(width, r.name.size());
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(w, s.size()), ' ');
        return s;
    };
    std::string out = pad("Predictor", width) + " | Accuracy\n" + std::string(width, '-') + "-+-" + std::string(8, '-') + "\n";
    for (const auto& r : rows) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%7.1f%%", 100.0 * r.accuracy);
        out += pad(r.name, width) + " | " + buf + "\n";
    }
    return out;
}

SessionSnapshot replay_review_log(const std::vector<ReviewTask>& tasks, std::string_view log) {
    const auto ids = index_tasks(tasks);
    SessionSnapshot s;
    for (const auto& line : lines_of(log)) {
        const json ev = parse_json(line, "review event");
        try {
            apply_event(tasks, ids, s, ev);
        } catch (const json::exception& e) {
            throw IngestionError(std::string("bad review event: ") + e.what(), 0);
        }
    }
    return s;
}

ReviewService::ReviewService(std::vector<ReviewTask> tasks, std::vector<SearchDocument> corpus, ReviewOptions options)
    : tasks_(std::move(tasks)), corpus_(std::move(corpus)), options_(std::move(options)) {
    task_ids_ = index_tasks(tasks_);
    for (const auto& d : corpus_) corpus_text_.push_back(normalize(d.text, options_.policy));
    if (options_.snapshot_every == 0) options_.snapshot_every = 1;
    std::filesystem::create_directories(options_.log_dir);
    for (const auto& entry : std::filesystem::directory_iterator(options_.log_dir)) {
        if (entry.path().extension() != ".jsonl") continue;
        const std::string sid = entry.path().stem().string();
        const auto lines = lines_of(read_file(entry.path()));
        SessionSnapshot s;
        std::size_t from = 0;
        const auto snap_path = options_.log_dir / (sid + ".snapshot.json");
        if (std::filesystem::exists(snap_path)) {
            try {
                s = snapshot_from_json(json::parse(read_file(snap_path)));
                from = s.events;
            } catch (const json::exception&) {
                s = SessionSnapshot{};  // unreadable snapshot: replay the whole log
            }
            if (from > lines.size() || s.tasks.size() != tasks_.size()) {
                s = SessionSnapshot{};
                from = 0;
            }
        }
        for (std::size_t i = from; i < lines.size(); ++i) apply_event(tasks_, task_ids_, s, parse_json(lines[i], "review event"));
        auto session = std::make_shared<Session>();
        session->snap = std::make_shared<const SessionSnapshot>(std::move(s));
        sessions_[sid] = std::move(session);
    }
}

std::int64_t ReviewService::now() const {
    if (options_.clock) return options_.clock();
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

void ReviewService::authorize(std::string_view header) const {
    if (options_.token.empty() || header != "Bearer " + options_.token) throw ProtocolError(401, "missing or wrong session token");
}

std::filesystem::path ReviewService::log_path(const std::string& sid) const { return options_.log_dir / (sid + ".jsonl"); }

std::shared_ptr<ReviewService::Session> ReviewService::find(const std::string& sid) const {
    std::shared_lock lock(sessions_mu_);
    const auto it = sessions_.find(sid);
    if (it == sessions_.end()) throw ProtocolError(404, "unknown session " + sid);
    return it->second;
}

std::shared_ptr<const SessionSnapshot> ReviewService::snapshot(const std::string& sid) const {
    return std::atomic_load(&find(sid)->snap);
}

std::size_t ReviewService::task_index(const std::string& tid) const {
    const auto it = task_ids_.find(tid);
    if (it == task_ids_.end()) throw ProtocolError(404, "unknown task " + tid);
    return it->second;
}

std::shared_ptr<const SessionSnapshot> ReviewService::record(Session& session, const std::string& sid, std::string event_json) {
    // Caller holds session.writer.
    auto next = std::make_shared<SessionSnapshot>(*std::atomic_load(&session.snap));
    apply_event(tasks_, task_ids_, *next, json::parse(event_json));
    {
        std::ofstream out(log_path(sid), std::ios::app | std::ios::binary);
        out << event_json << '\n';
        out.flush();
        if (!out) throw std::runtime_error("cannot append to " + log_path(sid).string());
    }
    if (next->events % options_.snapshot_every == 0) {
        const auto tmp = options_.log_dir / (sid + ".snapshot.json.tmp");
        write_file(tmp, snapshot_json(*next).dump());
        std::filesystem::rename(tmp, options_.log_dir / (sid + ".snapshot.json"));
    }
    std::shared_ptr<const SessionSnapshot> published = std::move(next);
    std::atomic_store(&session.snap, published);
    return published;
}

std::string ReviewService::view(const SessionSnapshot& s, std::size_t i) const {
    const ReviewTask& t = tasks_[i];
    const TaskProgress& p = s.tasks.at(i);
    json j;
    j["session_id"] = s.id;
    j["task_id"] = t.id;
    j["index"] = i;
    j["state"] = state_name(p.state);
    j["blind"] = json::parse(t.blind);
    if (p.state >= TaskState::pre_peek_submitted) j["pre_peek"] = p.pre_peek;
    // Nothing derived from the model or the truth before the reveal.
    if (p.state >= TaskState::revealed) {
        json list = json::array();
        for (std::size_t k = 0; k < t.suggestions.size() && k < kRevealed; ++k)
            list.push_back({{"rank", k + 1}, {"text", t.suggestions[k].text}, {"likelihood", t.suggestions[k].likelihood}});
        j["suggestions"] = std::move(list);
    }
    if (p.state == TaskState::post_peek_submitted) {
        j["post_peek"] = p.post_peek;
        j["ground_truth"] = t.truth;
        j["pre_peek_correct"] = matches(p.pre_peek, t, options_.policy);
        j["post_peek_correct"] = matches(p.post_peek, t, options_.policy);
        j["model_rank"] = model_rank(t, options_.policy);
        j["elapsed_ms"] = p.post_peek_ms - p.opened_ms;
    }
    return j.dump();
}

std::string ReviewService::create_session() {
    std::string sid;
    {
        std::shared_lock lock(sessions_mu_);
        do sid = random_id();
        while (sessions_.count(sid));
    }
    auto session = std::make_shared<Session>();
    session->snap = std::make_shared<const SessionSnapshot>();
    record(*session, sid, json{{"type", "create"}, {"t_ms", now()}, {"session", sid}, {"tasks", tasks_.size()}}.dump());
    {
        // Published only once the create event is on disk.
        std::unique_lock lock(sessions_mu_);
        sessions_[sid] = std::move(session);
    }
    return json{{"session_id", sid}, {"tasks", tasks_.size()}}.dump();
}

std::string ReviewService::session(const std::string& sid) const {
    const auto s = snapshot(sid);
    json counts = json::object();
    for (auto st : {TaskState::unseen, TaskState::pre_peek_submitted, TaskState::revealed, TaskState::post_peek_submitted}) {
        std::size_t n = 0;
        for (const auto& p : s->tasks) n += p.state == st;
        counts[state_name(st)] = n;
    }
    return json{{"session_id", sid}, {"tasks", s->tasks.size()}, {"states", counts}, {"events", s->events}}.dump();
}

std::string ReviewService::next(const std::string& sid) {
    const auto session = find(sid);
    std::lock_guard w(session->writer);
    auto s = std::atomic_load(&session->snap);
    for (std::size_t i = 0; i < s->tasks.size(); ++i) {
        if (s->tasks[i].state == TaskState::post_peek_submitted) continue;
        if (s->tasks[i].opened_ms < 0)
            s = record(*session, sid, json{{"type", "open"}, {"t_ms", now()}, {"task", tasks_[i].id}}.dump());
        return view(*s, i);
    }
    return json{{"session_id", sid}, {"done", true}}.dump();
}

std::string ReviewService::task(const std::string& sid, const std::string& tid) {
    const auto session = find(sid);
    const std::size_t i = task_index(tid);
    std::lock_guard w(session->writer);
    auto s = std::atomic_load(&session->snap);
    if (s->tasks.at(i).opened_ms < 0) s = record(*session, sid, json{{"type", "open"}, {"t_ms", now()}, {"task", tid}}.dump());
    return view(*s, i);
}

std::string ReviewService::pre_peek(const std::string& sid, const std::string& tid, const std::string& body) {
    const auto session = find(sid);
    const std::size_t i = task_index(tid);
    const std::string answer = answer_of(body);
    std::lock_guard w(session->writer);
    const auto s = record(*session, sid, json{{"type", "pre_peek"}, {"t_ms", now()}, {"task", tid}, {"answer", answer}}.dump());
    return view(*s, i);
}

std::string ReviewService::reveal(const std::string& sid, const std::string& tid) {
    const auto session = find(sid);
    const std::size_t i = task_index(tid);
    std::lock_guard w(session->writer);
    auto s = std::atomic_load(&session->snap);
    // Asking again after the reveal just shows the same list.
    if (s->tasks.at(i).state < TaskState::revealed)
        s = record(*session, sid, json{{"type", "reveal"}, {"t_ms", now()}, {"task", tid}}.dump());
    return view(*s, i);
}

std::string ReviewService::post_peek(const std::string& sid, const std::string& tid, const std::string& body) {
    const auto session = find(sid);
    const std::size_t i = task_index(tid);
    const std::string answer = answer_of(body);
    std::lock_guard w(session->writer);
    const auto s = record(*session, sid, json{{"type", "post_peek"}, {"t_ms", now()}, {"task", tid}, {"answer", answer}}.dump());
    return view(*s, i);
}

std::string ReviewService::search(const std::string& sid, const std::string& tid, std::string_view query) const {
    find(sid);
    const ReviewTask& t = tasks_[task_index(tid)];
    const NormalizedText q = normalize(query, options_.policy);
    if (q.word_count() == 0) throw ProtocolError(400, "empty query");
    constexpr std::size_t kLimit = 20;
    constexpr std::size_t kContext = 8;
    json hits = json::array();
    for (std::size_t d = 0; d < corpus_.size() && hits.size() < kLimit; ++d) {
        if (corpus_[d].id == t.source) continue;
        const auto& text = corpus_text_[d];
        for (std::size_t w = 0; w + q.word_count() <= text.word_count() && hits.size() < kLimit; ++w) {
            bool same = true;
            for (std::size_t k = 0; k < q.word_count() && same; ++k) same = text.comparison_word(w + k) == q.comparison_word(k);
            if (!same) continue;
            const std::size_t a = w > kContext ? w - kContext : 0;
            const std::size_t b = std::min(text.word_count(), w + q.word_count() + kContext) - 1;
            const std::size_t from = text.word_spans[a].start;
            const std::size_t to = text.word_spans[b].end;
            hits.push_back({{"document", corpus_[d].id}, {"title", corpus_[d].title}, {"word_index", w},
                            {"snippet", text.normalized.substr(from, to - from)}});
        }
    }
    return json{{"query", std::string(query)}, {"results", std::move(hits)}}.dump();
}

std::string ReviewService::export_results(const std::string& sid) const {
    const auto s = snapshot(sid);
    std::size_t completed = 0;
    const auto rows = review_rows(tasks_, *s, options_.policy, &completed);
    json j;
    j["session_id"] = sid;
    j["tasks_total"] = tasks_.size();
    j["completed"] = completed;
    json jr = json::array();
    for (const auto& r : rows) jr.push_back({{"name", r.name}, {"correct", r.correct}, {"accuracy", r.accuracy}});
    j["rows"] = std::move(jr);
    j["table"] = render_review_table(rows);
    json per = json::array();
    std::int64_t total_ms = 0;
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        const auto& p = s->tasks.at(i);
        json t{{"task_id", tasks_[i].id}, {"state", state_name(p.state)}};
        if (p.state == TaskState::post_peek_submitted) {
            t["pre_peek"] = p.pre_peek;
            t["post_peek"] = p.post_peek;
            t["ground_truth"] = tasks_[i].truth;
            t["pre_peek_correct"] = matches(p.pre_peek, tasks_[i], options_.policy);
            t["post_peek_correct"] = matches(p.post_peek, tasks_[i], options_.policy);
            t["model_rank"] = model_rank(tasks_[i], options_.policy);
            t["elapsed_ms"] = p.post_peek_ms - p.opened_ms;
            total_ms += p.post_peek_ms - p.opened_ms;
        }
        per.push_back(std::move(t));
    }
    j["tasks"] = std::move(per);
    j["total_elapsed_ms"] = total_ms;
    return j.dump();
}

std::string ReviewService::log(const std::string& sid) const {
    const auto session = find(sid);
    std::lock_guard w(session->writer);
    return read_file(log_path(sid));
}

void mount_review_routes(httplib::Server& server, std::shared_ptr<ReviewService> service) {
    using Handler = std::function<std::string(const httplib::Request&)>;
    auto guarded = [service](int ok_status, Handler fn, const char* type = "application/json") {
        return [service, ok_status, fn, type](const httplib::Request& req, httplib::Response& res) {
            try {
                service->authorize(req.get_header_value("Authorization"));
                res.set_content(fn(req), type);
                res.status = ok_status;
            } catch (const ProtocolError& e) {
                res.status = e.status;
                res.set_content(json{{"error", e.what()}, {"status", e.status}}.dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 500;
                res.set_content(json{{"error", e.what()}, {"status", 500}}.dump(), "application/json");
            }
        };
    };
    const std::string base = "/v1/review/sessions";
    const std::string sid = "/([^/]+)";
    const std::string task = base + sid + "/tasks" + sid;
    server.Post(base, guarded(201, [service](const httplib::Request&) { return service->create_session(); }));
    server.Get(base + sid, guarded(200, [service](const httplib::Request& r) { return service->session(r.matches[1]); }));
    server.Get(base + sid + "/next", guarded(200, [service](const httplib::Request& r) { return service->next(r.matches[1]); }));
    server.Get(base + sid + "/export",
               guarded(200, [service](const httplib::Request& r) { return service->export_results(r.matches[1]); }));
    server.Get(base + sid + "/log", guarded(
                                        200, [service](const httplib::Request& r) { return service->log(r.matches[1]); },
                                        "application/x-ndjson"));
    server.Get(task, guarded(200, [service](const httplib::Request& r) { return service->task(r.matches[1], r.matches[2]); }));
    server.Post(task + "/pre-peek", guarded(200, [service](const httplib::Request& r) {
                    return service->pre_peek(r.matches[1], r.matches[2], r.body);
                }));
    server.Post(task + "/reveal",
                guarded(200, [service](const httplib::Request& r) { return service->reveal(r.matches[1], r.matches[2]); }));
    server.Post(task + "/post-peek", guarded(200, [service](const httplib::Request& r) {
                    return service->post_peek(r.matches[1], r.matches[2], r.body);
                }));
    server.Get(task + "/search", guarded(200, [service](const httplib::Request& r) {
                   return service->search(r.matches[1], r.matches[2], r.get_param_value("q"));
               }));
}

}  // namespace scriptorium
