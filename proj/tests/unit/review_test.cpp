#include <atomic>
#include <filesystem>
#include <random>
#include <thread>

#include "doctest.h"
#include "json.hpp"
#include "scriptorium/corpus.hpp"
#include "scriptorium/errors.hpp"
#include "scriptorium/review.hpp"
#include "scriptorium/simulate.hpp"
#include "server_fixture.hpp"

using namespace scriptorium;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    std::random_device rd;
    const auto p = fs::temp_directory_path() / ("scriptorium-" + tag + "-" + std::to_string(rd()));
    fs::remove_all(p);
    return p;
}

// Suggestions and truths are strings that never occur in any context.
std::vector<ReviewTask> hand_tasks() {
    std::vector<ReviewTask> tasks;
    const char* truths[] = {"ζζζ ξξξ", "ψψψψ", "φφφ φφφ"};
    for (int t = 0; t < 3; ++t) {
        ReviewTask x;
        x.id = "gap-" + std::to_string(t);
        x.blind = json{{"id", x.id}, {"n_chars", 6}, {"before", "αβγ δεη "}, {"after", " θικ λμν"}, {"title", "Work"}}.dump();
        x.source = "doc-" + std::to_string(t);
        x.truth = truths[t];
        for (int k = 0; k < 12; ++k) {
            std::string s = "ωω" + std::to_string(t) + "σ" + std::to_string(k);
            x.suggestions.push_back({s, std::exp(-1.0 - k), -1.0 - k});
        }
        tasks.push_back(std::move(x));
    }
    tasks[0].suggestions[0].text = "ζζζ ξξξ";  // model top-1 right on task 0
    tasks[1].suggestions[1].text = "ψψψψ";     // top-2 on task 1
    return tasks;
}

std::vector<SearchDocument> hand_corpus() {
    return {{"doc-0", "Work", "αβγ ζζζ ξξξ δεη"}, {"doc-1", "Other", "ρρρ ζζζ ξξξ τττ"}, {"doc-2", "Third", "ζζζ"}};
}

std::int64_t fake_time = 1000;

ReviewOptions options(const fs::path& dir, std::size_t snapshot_every = 20) {
    ReviewOptions o;
    o.log_dir = dir;
    o.token = "secret";
    o.snapshot_every = snapshot_every;
    o.clock = [] { return fake_time += 250; };
    return o;
}

// Text the response may not contain before the reveal.
std::vector<std::string> hidden_strings(const ReviewTask& t) {
    std::vector<std::string> out{t.truth};
    for (const auto& s : t.suggestions) out.push_back(s.text);
    return out;
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
    return n;
}

// A hidden string may show up only as often as the blind context (and the
// reviewer's own answer) already contains it.
bool blind(const std::string& response, const ReviewTask& t, const std::string& own_answer = "") {
    for (const auto& h : hidden_strings(t))
        if (occurrences(response, h) > occurrences(t.blind, h) + occurrences(own_answer, h)) return false;
    return true;
}

int status_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const ProtocolError& e) {
        return e.status;
    }
    return 200;
}

}  // namespace

TEST_CASE("review state machine") {
    const auto dir = fresh_dir("review");
    ReviewService svc(hand_tasks(), hand_corpus(), options(dir));
    const std::string sid = json::parse(svc.create_session()).at("session_id");

    CHECK(status_of([&] { svc.reveal(sid, "gap-0"); }) == 409);
    CHECK(status_of([&] { svc.post_peek(sid, "gap-0", R"({"answer":"x"})"); }) == 409);
    CHECK(status_of([&] { svc.next("nope"); }) == 404);
    CHECK(status_of([&] { svc.task(sid, "gap-9"); }) == 404);
    CHECK(status_of([&] { svc.pre_peek(sid, "gap-0", "not json"); }) == 400);
    CHECK(status_of([&] { svc.pre_peek(sid, "gap-0", R"({"answer":3})"); }) == 400);
    CHECK(status_of([&] { svc.authorize("Bearer wrong"); }) == 401);
    CHECK(status_of([&] { svc.authorize(""); }) == 401);
    CHECK(status_of([&] { svc.authorize("Bearer secret"); }) == 200);

    const auto first = json::parse(svc.next(sid));
    CHECK(first.at("task_id") == "gap-0");
    CHECK(first.at("state") == "unseen");
    CHECK(first.at("blind").at("title") == "Work");
    CHECK_FALSE(first.contains("suggestions"));

    const auto pre = json::parse(svc.pre_peek(sid, "gap-0", R"({"answer":"ηηη"})"));
    CHECK(pre.at("state") == "pre_peek_submitted");
    CHECK_FALSE(pre.contains("suggestions"));
    CHECK(status_of([&] { svc.pre_peek(sid, "gap-0", R"({"answer":"again"})"); }) == 409);
    CHECK(status_of([&] { svc.post_peek(sid, "gap-0", R"({"answer":"x"})"); }) == 409);

    const auto rev = json::parse(svc.reveal(sid, "gap-0"));
    CHECK(rev.at("state") == "revealed");
    REQUIRE(rev.at("suggestions").size() == 10);
    for (std::size_t k = 0; k < 10; ++k) {
        CHECK(rev.at("suggestions")[k].at("rank") == k + 1);
        CHECK(rev.at("suggestions")[k].at("likelihood").get<double>() == doctest::Approx(std::exp(-1.0 - k)));
    }
    CHECK_FALSE(rev.contains("ground_truth"));
    CHECK(json::parse(svc.reveal(sid, "gap-0")) == rev);  // idempotent

    const auto post = json::parse(svc.post_peek(sid, "gap-0", R"({"answer":"ζζζ  ξξξ"})"));
    CHECK(post.at("state") == "post_peek_submitted");
    CHECK(post.at("ground_truth") == "ζζζ ξξξ");
    CHECK(post.at("pre_peek_correct") == false);
    CHECK(post.at("post_peek_correct") == true);
    CHECK(post.at("model_rank") == 1);
    CHECK(status_of([&] { svc.post_peek(sid, "gap-0", R"({"answer":"x"})"); }) == 409);
    CHECK(status_of([&] { svc.pre_peek(sid, "gap-0", R"({"answer":"x"})"); }) == 409);

    CHECK(json::parse(svc.next(sid)).at("task_id") == "gap-1");
    fs::remove_all(dir);
}

TEST_CASE("nothing hidden leaks before the reveal") {
    const auto dir = fresh_dir("blind");
    const auto tasks = hand_tasks();
    ReviewService svc(tasks, hand_corpus(), options(dir));
    const std::string sid = json::parse(svc.create_session()).at("session_id");
    for (const auto& t : tasks) {
        const std::string answer = "ηηη";
        const std::string body = json{{"answer", answer}}.dump();
        CHECK(blind(svc.next(sid), t));
        CHECK(blind(svc.task(sid, t.id), t));
        CHECK(blind(svc.session(sid), t));
        CHECK(blind(svc.export_results(sid), t));
        CHECK(blind(svc.log(sid), t));
        CHECK(status_of([&] { svc.reveal(sid, t.id); }) == 409);
        CHECK(blind(svc.pre_peek(sid, t.id, body), t, answer));
        CHECK(blind(svc.task(sid, t.id), t, answer));
        CHECK(blind(svc.export_results(sid), t, answer));
        // From here on the list is shown.
        const std::string revealed = svc.reveal(sid, t.id);
        CHECK_FALSE(blind(revealed, t, answer));
        svc.post_peek(sid, t.id, body);
    }
    fs::remove_all(dir);
}

TEST_CASE("export arithmetic and log replay") {
    const auto dir = fresh_dir("export");
    const auto tasks = hand_tasks();
    std::string sid;
    std::string exported;
    {
        ReviewService svc(tasks, hand_corpus(), options(dir, 4));
        sid = json::parse(svc.create_session()).at("session_id");
        // Post-peek always copies the model's top-1.
        for (const auto& t : tasks) {
            svc.pre_peek(sid, t.id, json{{"answer", t.id == "gap-2" ? t.truth : std::string("ηηη")}}.dump());
            const auto rev = json::parse(svc.reveal(sid, t.id));
            svc.post_peek(sid, t.id, json{{"answer", rev.at("suggestions")[0].at("text")}}.dump());
        }
        exported = svc.export_results(sid);
        const auto j = json::parse(exported);
        CHECK(j.at("completed") == 3);
        const auto& rows = j.at("rows");
        REQUIRE(rows.size() == 5);
        CHECK(rows[0].at("name") == "Model (top-1)");
        CHECK(rows[1].at("name") == "Expert pre-peek");
        CHECK(rows[2].at("name") == "Model (top-2)");
        CHECK(rows[3].at("name") == "Expert post-peek");
        CHECK(rows[4].at("name") == "Model (top-10)");
        CHECK(rows[0].at("correct") == 1);
        CHECK(rows[1].at("correct") == 1);
        CHECK(rows[2].at("correct") == 2);
        CHECK(rows[4].at("correct") == 2);
        // Identity: copying top-1 scores exactly like the model's top-1.
        CHECK(rows[3].at("accuracy") == rows[0].at("accuracy"));
        CHECK(j.at("table") ==
              "Predictor        | Accuracy\n"
              "-----------------+---------\n"
              "Model (top-1)    |    33.3%\n"
              "Expert pre-peek  |    33.3%\n"
              "Model (top-2)    |    66.7%\n"
              "Expert post-peek |    33.3%\n"
              "Model (top-10)   |    66.7%\n");
        for (const auto& t : j.at("tasks")) CHECK(t.at("elapsed_ms").get<std::int64_t>() > 0);

        // The table follows from the raw decision log alone.
        const SessionSnapshot replayed = replay_review_log(tasks, read_file(svc.log_path(sid)));
        const auto rows2 = review_rows(tasks, replayed, kComparisonPolicy);
        CHECK(render_review_table(rows2) == j.at("table").get<std::string>());
        CHECK(fs::exists(dir / (sid + ".snapshot.json")));
    }
    // A restarted service restores the session from snapshot plus log.
    ReviewService again(tasks, hand_corpus(), options(dir, 4));
    CHECK(again.export_results(sid) == exported);
    fs::remove(dir / (sid + ".snapshot.json"));
    ReviewService log_only(tasks, hand_corpus(), options(dir, 4));
    CHECK(log_only.export_results(sid) == exported);
    fs::remove_all(dir);
}

TEST_CASE("bad logs are refused") {
    const auto tasks = hand_tasks();
    const std::string create = R"({"type":"create","t_ms":1,"session":"s","tasks":3})";
    CHECK_THROWS_AS(replay_review_log(tasks, create + "\n" + R"({"type":"reveal","t_ms":2,"task":"gap-0"})"), ProtocolError);
    CHECK_THROWS_AS(replay_review_log(tasks, "{"), IngestionError);
    CHECK_THROWS_AS(replay_review_log(tasks, R"({"type":"create","t_ms":1,"session":"s","tasks":7})"), ProtocolError);
    const auto s = replay_review_log(tasks, create);
    CHECK(s.tasks.size() == 3);
}

TEST_CASE("search leaves out the example's own document") {
    const auto dir = fresh_dir("search");
    ReviewService svc(hand_tasks(), hand_corpus(), options(dir));
    const std::string sid = json::parse(svc.create_session()).at("session_id");
    const auto r = json::parse(svc.search(sid, "gap-0", "ζζζ ξξξ"));
    REQUIRE(r.at("results").size() == 1);
    CHECK(r.at("results")[0].at("document") == "doc-1");
    CHECK(r.at("results")[0].at("snippet") == "ρρρ ζζζ ξξξ τττ");
    const auto r2 = json::parse(svc.search(sid, "gap-1", "ζζζ"));
    CHECK(r2.at("results").size() == 2);  // doc-1 is the source of gap-1
    CHECK(status_of([&] { svc.search(sid, "gap-1", "  "); }) == 400);
    CHECK(status_of([&] { svc.search("nope", "gap-1", "ζζζ"); }) == 404);
    fs::remove_all(dir);
}

TEST_CASE("review over http") {
    const auto dir = fresh_dir("http");
    const auto tasks = hand_tasks();
    auto svc = std::make_shared<ReviewService>(tasks, hand_corpus(), options(dir));
    test::LocalServer s;
    mount_review_routes(s.server, svc);
    s.start();
    httplib::Client cli(s.url());
    const httplib::Headers auth{{"Authorization", "Bearer secret"}};

    auto r = cli.Post("/v1/review/sessions");
    REQUIRE(r);
    CHECK(r->status == 401);
    r = cli.Post("/v1/review/sessions", httplib::Headers{{"Authorization", "Bearer nope"}}, "", "application/json");
    CHECK(r->status == 401);
    r = cli.Post("/v1/review/sessions", auth, "", "application/json");
    REQUIRE(r->status == 201);
    const std::string sid = json::parse(r->body).at("session_id");
    const std::string base = "/v1/review/sessions/" + sid;

    CHECK(cli.Get("/v1/review/sessions/zzz/next", auth)->status == 404);
    r = cli.Post(base + "/tasks/gap-0/reveal", auth, "", "application/json");
    CHECK(r->status == 409);
    CHECK(json::parse(r->body).at("status") == 409);
    CHECK(blind(r->body, tasks[0]));

    r = cli.Get(base + "/next", auth);
    CHECK(r->status == 200);
    CHECK(blind(r->body, tasks[0]));
    r = cli.Post(base + "/tasks/gap-0/pre-peek", auth, R"({"answer":"ηηη"})", "application/json");
    CHECK(r->status == 200);
    CHECK(blind(r->body, tasks[0], "ηηη"));
    r = cli.Post(base + "/tasks/gap-0/reveal", auth, "", "application/json");
    CHECK(r->status == 200);
    CHECK(json::parse(r->body).at("suggestions").size() == 10);
    r = cli.Post(base + "/tasks/gap-0/post-peek", auth, R"({"answer":"ζζζ ξξξ"})", "application/json");
    CHECK(json::parse(r->body).at("post_peek_correct") == true);
    r = cli.Get(base + "/tasks/gap-0/search?q=%CE%B6%CE%B6%CE%B6", auth);
    CHECK(r->status == 200);
    CHECK(json::parse(r->body).at("results").size() == 2);
    r = cli.Get(base + "/export", auth);
    CHECK(json::parse(r->body).at("completed") == 1);
    r = cli.Get(base + "/log", auth);
    CHECK(r->status == 200);
    CHECK(occurrences(r->body, "\n") == 5);  // create, open, pre_peek, reveal, post_peek
    fs::remove_all(dir);
}

TEST_CASE("concurrent sessions keep separate logs") {
    const auto dir = fresh_dir("concurrent");
    const auto tasks = hand_tasks();
    ReviewOptions o = options(dir, 3);
    o.clock = [] {
        static std::atomic<std::int64_t> t{0};
        return ++t;
    };
    ReviewService svc(tasks, hand_corpus(), o);
    std::vector<std::string> sids(4);
    std::vector<std::thread> workers;
    std::atomic<int> failures{0};
    for (std::size_t w = 0; w < sids.size(); ++w)
        workers.emplace_back([&, w] {
            try {
                sids[w] = json::parse(svc.create_session()).at("session_id");
                for (const auto& t : tasks) {
                    svc.pre_peek(sids[w], t.id, R"({"answer":"ηηη"})");
                    // Readers see consistent snapshots while this session writes.
                    svc.export_results(sids[w]);
                    svc.reveal(sids[w], t.id);
                    svc.post_peek(sids[w], t.id, json{{"answer", w % 2 ? t.truth : std::string("ηηη")}}.dump());
                }
            } catch (...) {
                ++failures;
            }
        });
    for (auto& t : workers) t.join();
    CHECK(failures == 0);
    for (std::size_t w = 0; w < sids.size(); ++w) {
        const auto j = json::parse(svc.export_results(sids[w]));
        CHECK(j.at("completed") == 3);
        CHECK(j.at("rows")[3].at("correct") == (w % 2 ? 3 : 0));
        const auto replayed = replay_review_log(tasks, read_file(svc.log_path(sids[w])));
        CHECK(replayed.events == 10);
    }
    fs::remove_all(dir);
}

TEST_CASE("review tasks load from pipeline files") {
    const std::string blind = R"({"id":"gap-0000","n_chars":3,"before":"α ","after":" β","title":"T"})"
                              "\n";
    const std::string truth = R"({"id":"gap-0000","words":"γδε","document":4})"
                              "\n";
    const std::string pred = R"({"gap_id":"gap-0000","n_chars":3,"posterior":[1,0,0,0,0,0,0],"spans":[{"text":"γδε","token_count":1,"span_logprob":-1,"count_logprob":0,"score":-1}]})"
                             "\n";
    const auto t = load_review_tasks(blind, truth, pred);
    REQUIRE(t.size() == 1);
    CHECK(t[0].source == "4");
    CHECK(t[0].truth == "γδε");
    REQUIRE(t[0].suggestions.size() == 1);
    CHECK(t[0].suggestions[0].likelihood == doctest::Approx(std::exp(-1.0)));
    CHECK_THROWS_AS(load_review_tasks(blind, "", pred), IngestionError);
    CHECK_THROWS_AS(load_review_tasks(blind, truth, ""), IngestionError);
}
