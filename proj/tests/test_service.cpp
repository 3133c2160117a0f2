#include <catch_amalgamated.hpp>

#include <set>
#include <thread>

#include "harmless/service.hpp"
#include "harmless/service_http.hpp"
#include "harmless/synthetic.hpp"
#include "support.hpp"

using namespace harmless;
using namespace harmless::service;

namespace {

struct Data {
  std::shared_ptr<const Corpus> corpus;
  std::shared_ptr<const FeatureMatrix> features;
  Data() {
    synthetic::Options opt;
    opt.documents = 150;
    opt.positive_rate = 0.1;
    opt.seed = 8;
    auto c = std::make_shared<Corpus>(synthetic::generate(opt));
    features = std::make_shared<FeatureMatrix>(featurize(*c, FeatureMode::text, 300));
    corpus = c;
  }
};

const Data& data() {
  static const Data d;
  return d;
}

void register_data(ReviewService& svc) {
  svc.add_corpus("synth", data().corpus);
  svc.add_features("synth-text", data().features);
}

std::string truth_verdict(std::size_t doc) {
  return data().corpus->documents[doc].truth_categories.count("All") ? "vulnerable" : "non_vulnerable";
}

int api_status(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ApiError& e) {
    return e.status();
  }
  return 200;
}

std::string api_field(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ApiError& e) {
    return e.field();
  }
  return "<none>";
}

// Reviews `n` items. Reviewers alternate so double checks always find a
// different person.
void review(ReviewService& svc, const std::string& id, int n) {
  const std::vector<std::string> reviewers = {"ana", "ben", "cy", "probe"};
  int done = 0;
  int idle = 0;
  while (done < n) {
    bool progressed = false;
    for (const auto& r : reviewers) {
      const auto q = svc.queue(id, r, 1);
      if (q.at("stopped").get<bool>()) return;
      for (const auto& item : q.at("items")) {
        const auto doc = item.at("doc_id").get<std::size_t>();
        svc.submit(id, {{"doc_id", doc}, {"reviewer", r}, {"verdict", truth_verdict(doc)}});
        progressed = true;
        if (++done >= n) return;
      }
    }
    REQUIRE(++idle < 100000);
    REQUIRE(progressed);
  }
}

}  // namespace

TEST_CASE("create session") {
  ReviewService svc;
  register_data(svc);
  const auto st = svc.create_session(json::object());
  CHECK(st.at("round") == 0);
  CHECK(st.at("labeled") == 0);
  CHECK(st.at("queue_length") == 10);
  CHECK(st.at("no_positives_yet") == true);
  CHECK(st.at("estimated_recall") == 0.0);
  CHECK(st.at("config").at("n1") == 10);
  CHECK(svc.status(st.at("session")).at("corpus") == "synth");

  CHECK(api_field([&] { svc.create_session({{"config", {{"target_recall", 1.5}}}}); }) == "target_recall");
  CHECK(api_status([&] { svc.create_session({{"config", {{"target_recall", 1.5}}}}); }) == 400);
  CHECK(api_status([&] { svc.create_session({{"corpus", "nope"}}); }) == 404);
  CHECK(api_status([&] { svc.create_session({{"features", "nope"}}); }) == 404);
  CHECK(api_status([&] { svc.create_session({{"config", {{"stop_rule", "known_total"}}}}); }) == 400);
  CHECK(api_status([&] { svc.create_session(json::array()); }) == 400);
  CHECK(api_status([&] { svc.status("s999999"); }) == 404);

  ReviewService bare;
  auto plain = std::make_shared<Corpus>(test_support::make_corpus({"a b", "c d", "e f"}, {0}));
  bare.add_corpus("plain", plain);
  bare.add_features("plain", std::make_shared<FeatureMatrix>(featurize(*plain, FeatureMode::text, 10)));
  CHECK(api_status([&] { bare.create_session({{"config", {{"sampling_mode", "crash"}}}}); }) == 400);
  CHECK(api_field([&] { bare.create_session({{"config", {{"sampling_mode", "crash"}}}}); }) == "sampling_mode");
}

TEST_CASE("leases are exclusive and required") {
  ReviewService svc;
  register_data(svc);
  const std::string id = svc.create_session(json::object()).at("session");
  const auto a = svc.queue(id, "ana", 4).at("items");
  const auto b = svc.queue(id, "ben", 4).at("items");
  CHECK(a.size() == 4);
  CHECK(b.size() == 4);
  std::set<std::size_t> docs;
  for (const auto& i : a) docs.insert(i.at("doc_id").get<std::size_t>());
  for (const auto& i : b) CHECK(docs.insert(i.at("doc_id").get<std::size_t>()).second);
  // Re-polling returns the reviewer's own leases first.
  CHECK(svc.queue(id, "ana", 4).at("items").size() == 4);

  const auto doc_a = a[0].at("doc_id").get<std::size_t>();
  CHECK(api_status([&] { svc.submit(id, {{"doc_id", doc_a}, {"reviewer", "ben"}, {"verdict", "vulnerable"}}); }) ==
        409);
  CHECK(api_field([&] { svc.submit(id, {{"doc_id", doc_a}, {"reviewer", "ana"}, {"verdict", "maybe"}}); }) ==
        "verdict");
  CHECK(api_field([&] { svc.submit(id, {{"reviewer", "ana"}, {"verdict", "vulnerable"}}); }) == "doc_id");
  CHECK(api_field([&] { svc.queue(id, "", 1); }) == "reviewer");
  CHECK(api_field([&] { svc.queue(id, "ana", 0); }) == "limit");

  const json body = {{"doc_id", doc_a}, {"reviewer", "ana"}, {"verdict", truth_verdict(doc_a)}};
  const auto ack1 = svc.submit(id, body);
  const auto ack2 = svc.submit(id, body);
  CHECK(ack1 == ack2);
  CHECK(ack1.at("seq") == 1);
  CHECK(ack1.at("counters").at("labeled") == 1);
  CHECK(svc.status(id).at("seq") == 1);
}

TEST_CASE("leases expire") {
  auto now = std::chrono::system_clock::time_point{} + std::chrono::hours(1000);
  ServiceOptions opt;
  opt.lease_ttl = std::chrono::seconds(60);
  opt.clock = [&] { return now; };
  ReviewService svc(opt);
  register_data(svc);
  const std::string id = svc.create_session(json::object()).at("session");
  const auto a = svc.queue(id, "ana", 10).at("items");
  REQUIRE(a.size() == 10);
  CHECK(svc.queue(id, "ben", 10).at("items").empty());
  CHECK(a[0].at("lease_expires").get<std::string>().back() == 'Z');
  now += std::chrono::seconds(61);
  CHECK(svc.queue(id, "ben", 10).at("items").size() == 10);
  const auto doc = a[0].at("doc_id").get<std::size_t>();
  CHECK(api_status([&] { svc.submit(id, {{"doc_id", doc}, {"reviewer", "ana"}, {"verdict", "vulnerable"}}); }) ==
        409);
}

TEST_CASE("round boundary and counters") {
  ReviewService svc;
  register_data(svc);
  const std::string id = svc.create_session(json::object()).at("session");
  json last;
  const auto items = svc.queue(id, "ana", 10).at("items");
  for (const auto& item : items) {
    const auto doc = item.at("doc_id").get<std::size_t>();
    last = svc.submit(id, {{"doc_id", doc}, {"reviewer", "ana"}, {"verdict", truth_verdict(doc)}});
  }
  const auto st = svc.status(id);
  if (st.at("positives").get<std::size_t>() > 0) {
    CHECK(last.at("counters").at("round") == 1);
    CHECK(st.at("trace").size() == 1);
  }
  CHECK(st.at("queue_length").get<std::size_t>() > 0);
  review(svc, id, 60);
  const auto mid = svc.status(id);
  const auto r = mid.at("estimated_recall");
  if (!r.is_null()) {
    CHECK(r.get<double>() >= 0.0);
    CHECK(r.get<double>() <= 1.0);
  }
  CHECK(mid.at("events") == 70);
  CHECK(mid.at("cost").get<double>() == Catch::Approx(70.0 / 150.0));
}

TEST_CASE("double checks go to a different reviewer") {
  ReviewService svc;
  register_data(svc);
  const std::string id = svc.create_session({{"config", {{"correction_mode", "two_person"}}}}).at("session");
  bool saw_check = false;
  for (int k = 0; k < 10 && !saw_check; ++k) {
    const auto items = svc.queue(id, "ana", 1).at("items");
    REQUIRE(items.size() == 1);
    const auto doc = items[0].at("doc_id").get<std::size_t>();
    REQUIRE(items[0].at("purpose") == "inspect");
    svc.submit(id, {{"doc_id", doc}, {"reviewer", "ana"}, {"verdict", "non_vulnerable"}});
    for (const auto& i : svc.queue(id, "ana", 50).at("items")) {
      CHECK(i.at("purpose") == "inspect");
    }
    const auto other = svc.queue(id, "ben", 50).at("items");
    for (const auto& i : other) {
      if (i.at("doc_id") == doc) {
        CHECK(i.at("purpose") == "double_check");
        saw_check = true;
        svc.submit(id, {{"doc_id", doc}, {"reviewer", "ben"}, {"verdict", "vulnerable"}});
      }
    }
  }
  CHECK(saw_check);
  CHECK(svc.status(id).at("positives") == 1);
}

TEST_CASE("stopped sessions") {
  ReviewService svc;
  register_data(svc);
  const std::string id = svc.create_session({{"config", {{"stop_rule", "none"}}}}).at("session");
  review(svc, id, 1000);
  const auto st = svc.status(id);
  CHECK(st.at("stopped") == true);
  const auto q = svc.queue(id, "ana", 5);
  CHECK(q.at("stopped") == true);
  CHECK(q.at("items").empty());
  CHECK(q.at("final").at("positives") == st.at("positives"));
  CHECK(q.at("final").contains("estimate"));
  CHECK(q.at("final").contains("estimated_recall"));
  CHECK(api_status([&] { svc.submit(id, {{"doc_id", 0}, {"reviewer", "zed"}, {"verdict", "vulnerable"}}); }) == 409);
  const auto trace = svc.trace(id).at("trace");
  review(svc, id, 5);
  CHECK(svc.trace(id).at("trace") == trace);
  CHECK(trace.back().at("stop") == true);
  // Every document reviewed once for inspection.
  CHECK(st.at("labeled") == 150);
}

TEST_CASE("recovery replays to the same state") {
  test_support::TempDir dir;
  const auto snapshot_every = GENERATE(std::size_t{7}, std::size_t{1000});
  ServiceOptions opt;
  opt.data_dir = dir.path();
  opt.snapshot_every = snapshot_every;
  std::string id;
  json before, queue_before;
  {
    ReviewService svc(opt);
    register_data(svc);
    id = svc.create_session({{"config", {{"correction_mode", "dispute"}, {"seed", 5}}}}).at("session");
    review(svc, id, 47);
    before = svc.status(id);
    queue_before = svc.queue(id, "probe", 100);
  }
  ReviewService again(opt);
  register_data(again);
  CHECK(again.recover() == 1);
  auto after = again.status(id);
  CHECK(after == before);
  auto q = again.queue(id, "probe", 100);
  for (auto& i : q.at("items")) i.erase("lease_expires");
  for (auto& i : queue_before.at("items")) i.erase("lease_expires");
  CHECK(q == queue_before);

  // Continuing after recovery matches an uninterrupted run.
  review(again, id, 20);
  ReviewService straight;
  register_data(straight);
  const std::string id2 = straight.create_session({{"config", {{"correction_mode", "dispute"}, {"seed", 5}}}}).at("session");
  review(straight, id2, 67);
  auto a = again.status(id);
  auto b = straight.status(id2);
  CHECK(a.at("positives") == b.at("positives"));
  CHECK(a.at("labeled") == b.at("labeled"));
  CHECK(a.at("trace") == b.at("trace"));

  // The next session id does not collide.
  CHECK(again.create_session(json::object()).at("session") != id);
}

TEST_CASE("torn final log record is discarded") {
  test_support::TempDir dir;
  ServiceOptions opt;
  opt.data_dir = dir.path();
  std::string id;
  json before;
  {
    ReviewService svc(opt);
    register_data(svc);
    id = svc.create_session(json::object()).at("session");
    review(svc, id, 5);
    before = svc.status(id);
  }
  std::ofstream(dir / (id + ".ndjson"), std::ios::app) << "{\"type\":\"verdict\",\"seq\":6";
  ReviewService again(opt);
  register_data(again);
  again.recover();
  CHECK(again.status(id) == before);
}

TEST_CASE("documents") {
  ReviewService svc;
  register_data(svc);
  const auto d = svc.document(3);
  CHECK(d.at("doc_id") == 3);
  CHECK(d.at("path") == data().corpus->documents[3].path);
  CHECK(api_status([&] { svc.document(100000); }) == 404);
  CHECK(api_status([&] { svc.document(0, "elsewhere"); }) == 404);
  CHECK(svc.document(0, "synth").at("doc_id") == 0);
}

TEST_CASE("HTTP routes") {
  ReviewService svc;
  register_data(svc);
  httplib::Server server;
  bind_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread runner([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  auto created = client.Post("/sessions", "{}", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = json::parse(created->body).at("session");

  auto bad = client.Post("/sessions", R"({"config":{"target_recall":1.5}})", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body).at("field") == "target_recall");
  auto garbled = client.Post("/sessions", "{not json", "application/json");
  REQUIRE(garbled);
  CHECK(garbled->status == 400);

  auto st = client.Get("/sessions/" + id);
  REQUIRE(st);
  CHECK(st->status == 200);
  CHECK(json::parse(st->body).at("round") == 0);
  auto missing = client.Get("/sessions/nope");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  auto q = client.Get("/sessions/" + id + "/queue?reviewer=ana&limit=2");
  REQUIRE(q);
  CHECK(q->status == 200);
  const auto items = json::parse(q->body).at("items");
  REQUIRE(items.size() == 2);
  auto badlimit = client.Get("/sessions/" + id + "/queue?reviewer=ana&limit=x");
  REQUIRE(badlimit);
  CHECK(badlimit->status == 400);

  const auto doc = items[0].at("doc_id").get<std::size_t>();
  const std::string verdict = json{{"doc_id", doc}, {"reviewer", "ana"}, {"verdict", truth_verdict(doc)}}.dump();
  auto ack = client.Post("/sessions/" + id + "/verdicts", verdict, "application/json");
  REQUIRE(ack);
  CHECK(ack->status == 200);
  auto dup = client.Post("/sessions/" + id + "/verdicts", verdict, "application/json");
  REQUIRE(dup);
  CHECK(json::parse(dup->body).at("seq") == json::parse(ack->body).at("seq"));
  const std::string stranger =
      json{{"doc_id", items[1].at("doc_id")}, {"reviewer", "ben"}, {"verdict", "vulnerable"}}.dump();
  auto conflict = client.Post("/sessions/" + id + "/verdicts", stranger, "application/json");
  REQUIRE(conflict);
  CHECK(conflict->status == 409);

  auto tr = client.Get("/sessions/" + id + "/trace");
  REQUIRE(tr);
  CHECK(tr->status == 200);
  CHECK(json::parse(tr->body).contains("trace"));
  auto doc_res = client.Get("/documents/" + std::to_string(doc) + "?session=" + id);
  REQUIRE(doc_res);
  CHECK(doc_res->status == 200);
  CHECK(json::parse(doc_res->body).at("doc_id") == doc);
  auto doc_bad = client.Get("/documents/abc");
  REQUIRE(doc_bad);
  CHECK(doc_bad->status == 400);

  server.stop();
  runner.join();
}
