#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "scriptorium/text.hpp"

namespace httplib {
class Server;
}

namespace scriptorium {

// Blind gap-filling protocol. Per task and session the state only moves
// forward: unseen -> pre_peek_submitted -> revealed -> post_peek_submitted.
enum class TaskState { unseen, pre_peek_submitted, revealed, post_peek_submitted };
const char* state_name(TaskState s);

struct ReviewSuggestion {
    std::string text;
    double likelihood = 0.0;  // exp(score)
    double score = 0.0;
};

struct ReviewTask {
    std::string id;
    std::string blind;   // blind payload JSON: id, n_chars, before, after, title?
    std::string source;  // document the search never returns
    std::string truth;
    std::vector<ReviewSuggestion> suggestions;  // at most 10 are revealed
};

// Joins blind payloads, truth lines and gap prediction lines by id.
std::vector<ReviewTask> load_review_tasks(std::string_view blind_jsonl, std::string_view truth_jsonl,
                                          std::string_view predictions_jsonl);

struct SearchDocument {
    std::string id;
    std::string title;
    std::string text;
};

struct TaskProgress {
    TaskState state = TaskState::unseen;
    std::string pre_peek;
    std::string post_peek;
    std::int64_t opened_ms = -1;
    std::int64_t pre_peek_ms = -1;
    std::int64_t revealed_ms = -1;
    std::int64_t post_peek_ms = -1;
};

struct SessionSnapshot {
    std::string id;
    std::int64_t created_ms = 0;
    std::size_t events = 0;
    std::vector<TaskProgress> tasks;  // parallel to the service's task list
};

struct ReviewRow {
    std::string name;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

// Accuracies over the tasks whose post-peek answer is recorded, in the order
// Model (top-1), Expert pre-peek, Model (top-2), Expert post-peek, Model (top-10).
std::vector<ReviewRow> review_rows(const std::vector<ReviewTask>& tasks, const SessionSnapshot& s,
                                   NormalizationPolicy policy, std::size_t* completed = nullptr);
std::string render_review_table(const std::vector<ReviewRow>& rows);

// Rebuilds a session from its event log alone. Throws IngestionError on a
// malformed log and ProtocolError on an impossible transition.
SessionSnapshot replay_review_log(const std::vector<ReviewTask>& tasks, std::string_view log);

struct ReviewOptions {
    std::filesystem::path log_dir;
    std::string token;
    NormalizationPolicy policy = kComparisonPolicy;
    std::size_t snapshot_every = 20;
    std::function<std::int64_t()> clock;  // milliseconds; system clock when empty
};

// Every method returns a JSON body and throws ProtocolError (401, 404, 409,
// 400) on violations. Each session has one writer at a time (its mutex)
// appending to <log_dir>/<session>.jsonl; readers load an immutable snapshot.
// Sessions found in log_dir are restored on construction.
class ReviewService {
public:
    ReviewService(std::vector<ReviewTask> tasks, std::vector<SearchDocument> corpus, ReviewOptions options);

    void authorize(std::string_view authorization_header) const;

    std::string create_session();
    std::string session(const std::string& sid) const;
    std::string next(const std::string& sid);
    std::string task(const std::string& sid, const std::string& tid);
    std::string pre_peek(const std::string& sid, const std::string& tid, const std::string& body);
    std::string reveal(const std::string& sid, const std::string& tid);
    std::string post_peek(const std::string& sid, const std::string& tid, const std::string& body);
    std::string search(const std::string& sid, const std::string& tid, std::string_view query) const;
    std::string export_results(const std::string& sid) const;
    std::string log(const std::string& sid) const;

    std::shared_ptr<const SessionSnapshot> snapshot(const std::string& sid) const;
    const std::vector<ReviewTask>& tasks() const { return tasks_; }
    std::filesystem::path log_path(const std::string& sid) const;

private:
    struct Session {
        std::mutex writer;
        std::shared_ptr<const SessionSnapshot> snap;
    };

    std::shared_ptr<Session> find(const std::string& sid) const;
    std::size_t task_index(const std::string& tid) const;
    std::string view(const SessionSnapshot& s, std::size_t t) const;
    // Validates `event` against the current snapshot, appends it to the log and
    // publishes the new snapshot.
    std::shared_ptr<const SessionSnapshot> record(Session& session, const std::string& sid, std::string event_json);
    std::int64_t now() const;

    std::vector<ReviewTask> tasks_;
    std::map<std::string, std::size_t> task_ids_;
    std::vector<SearchDocument> corpus_;
    std::vector<NormalizedText> corpus_text_;
    ReviewOptions options_;
    mutable std::shared_mutex sessions_mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// Routes under /v1/review; every request needs "Authorization: Bearer <token>".
//   POST /v1/review/sessions
//   GET  /v1/review/sessions/{sid}
//   GET  /v1/review/sessions/{sid}/next
//   GET  /v1/review/sessions/{sid}/tasks/{tid}
//   POST /v1/review/sessions/{sid}/tasks/{tid}/pre-peek   {"answer": ...}
//   POST /v1/review/sessions/{sid}/tasks/{tid}/reveal
//   POST /v1/review/sessions/{sid}/tasks/{tid}/post-peek  {"answer": ...}
//   GET  /v1/review/sessions/{sid}/tasks/{tid}/search?q=
//   GET  /v1/review/sessions/{sid}/export
//   GET  /v1/review/sessions/{sid}/log
// Errors come back as {"error": ..., "status": ...}.
void mount_review_routes(httplib::Server& server, std::shared_ptr<ReviewService> service);

}  // namespace scriptorium
