#pragma once

// Live review sessions behind a JSON API. Transport-free: service_http.hpp
// binds these calls to HTTP routes.
//
// Each session has two locks. `write_mu` serializes submissions and engine
// rounds; `state_mu` guards the published engine, leases and acks and is held
// only briefly, so status and queue reads never wait on training. A round
// runs on a private copy of the engine that is swapped in when done.
//
// Persistence: <data_dir>/<id>.ndjson holds a create record followed by one
// verdict record per acknowledged event; <id>.snapshot.json is rewritten
// every `snapshot_every` events. Recovery loads the snapshot and replays the
// later records.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmless/config.hpp"
#include "harmless/corpus.hpp"
#include "harmless/engine.hpp"
#include "harmless/error.hpp"
#include "harmless/features.hpp"

namespace harmless::service {

using json = nlohmann::json;
using TimePoint = std::chrono::system_clock::time_point;
using Clock = std::function<TimePoint()>;

class ApiError : public Error {
 public:
  ApiError(int status, const std::string& message, std::string field = {}, std::optional<int> retry_after = {})
      : Error(message), status_(status), field_(std::move(field)), retry_after_(retry_after) {}
  int status() const noexcept { return status_; }
  const std::string& field() const noexcept { return field_; }
  std::optional<int> retry_after() const noexcept { return retry_after_; }

  json body() const {
    json j = {{"error", what()}, {"status", status_}};
    if (!field_.empty()) j["field"] = field_;
    if (retry_after_) j["retry_after"] = *retry_after_;
    return j;
  }

 private:
  int status_;
  std::string field_;
  std::optional<int> retry_after_;
};

inline std::string rfc3339(TimePoint t) {
  const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(t);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t - secs).count();
  const std::time_t tt = std::chrono::system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

struct ServiceOptions {
  std::filesystem::path data_dir;  // empty: no persistence
  std::chrono::seconds lease_ttl{30 * 60};
  std::size_t snapshot_every = 25;
  std::size_t excerpt_chars = 4000;
  Clock clock = [] { return std::chrono::system_clock::now(); };
};

// Live sessions review in small batches.
inline SessionConfig live_defaults() {
  SessionConfig c;
  c.n1 = 10;
  return c;
}

class ReviewService {
 public:
  explicit ReviewService(ServiceOptions options = {}) : options_(std::move(options)) {
    if (!options_.data_dir.empty()) std::filesystem::create_directories(options_.data_dir);
  }

  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  void add_corpus(const std::string& name, std::shared_ptr<const Corpus> corpus) {
    std::lock_guard<std::mutex> lock(registry_mu_);
    corpora_[name] = std::move(corpus);
  }

  void add_features(const std::string& name, std::shared_ptr<const FeatureMatrix> features) {
    std::lock_guard<std::mutex> lock(registry_mu_);
    features_[name] = std::move(features);
  }

  const ServiceOptions& options() const noexcept { return options_; }

  // Body: {"corpus": name, "features": name, "config": {...}}. Either name
  // may be omitted when exactly one is registered.
  json create_session(const json& body) {
    if (!body.is_object()) throw ApiError(400, "request body must be a JSON object");
    const auto corpus_ref = pick_ref(body, "corpus", corpora_);
    const auto features_ref = pick_ref(body, "features", features_);
    auto corpus = lookup(corpora_, corpus_ref, "corpus");
    auto features = lookup(features_, features_ref, "features");
    if (features->size() != corpus->size())
      throw ApiError(400, "feature matrix '" + features_ref + "' does not match corpus '" + corpus_ref + "'",
                     "features");
    SessionConfig config = live_defaults();
    const json cfg = body.contains("config") ? body.at("config") : json::object();
    try {
      config = config_from_json(cfg, config);
      if (!cfg.contains("feature_mode")) config.feature_mode = features->mode;
      if (config.feature_mode != features->mode)
        throw ConfigError("feature_mode", "does not match the mode of features '" + features_ref + "'");
      if (config.stop_rule == StopRule::known_total)
        throw ConfigError("stop_rule", "known_total is only available in simulation");
    } catch (const ConfigError& e) {
      throw ApiError(400, e.what(), e.field());
    }

    auto s = std::make_shared<LiveSession>();
    s->corpus_ref = corpus_ref;
    s->features_ref = features_ref;
    s->corpus = corpus;
    s->features = features;
    try {
      s->engine = std::make_unique<Session>(*corpus, *features, config);
    } catch (const ConfigError& e) {
      throw ApiError(400, e.what(), e.field());
    } catch (const ArgumentError& e) {
      throw ApiError(400, e.what());
    }
    {
      std::lock_guard<std::mutex> lock(registry_mu_);
      s->id = make_id(next_id_++);
      sessions_[s->id] = s;
    }
    if (persistent()) {
      json rec = {{"type", "create"},       {"session", s->id},          {"corpus", corpus_ref},
                  {"features", features_ref}, {"config", to_json(config)}, {"timestamp", rfc3339(options_.clock())}};
      s->log.open(log_path(s->id), std::ios::app);
      append(*s, rec);
    }
    std::lock_guard<std::mutex> lock(s->state_mu);
    return status_of(*s);
  }

  json status(const std::string& id) const {
    auto s = get(id);
    std::lock_guard<std::mutex> lock(s->state_mu);
    return status_of(*s);
  }

  json trace(const std::string& id) const {
    auto s = get(id);
    std::lock_guard<std::mutex> lock(s->state_mu);
    return {{"session", s->id}, {"stopped", s->engine->stopped()}, {"trace", trace_of(*s)}};
  }

  // Leases up to `limit` queue items to `reviewer`. Items leased to someone
  // else, and double checks of documents this reviewer already judged, are
  // withheld.
  json queue(const std::string& id, const std::string& reviewer, std::size_t limit = 1) {
    if (reviewer.empty()) throw ApiError(400, "reviewer is required", "reviewer");
    if (limit == 0) throw ApiError(400, "limit must be at least 1", "limit");
    auto s = get(id);
    std::lock_guard<std::mutex> lock(s->state_mu);
    const Session& e = *s->engine;
    if (e.stopped()) {
      json j = {{"session", s->id}, {"stopped", true}, {"items", json::array()}};
      j["final"] = counters(*s);
      return j;
    }
    if (s->training) throw ApiError(503, "round in progress", {}, 1);
    const auto now = options_.clock();
    expire_leases(*s, now);
    json items = json::array();
    for (const auto& item : e.queue()) {
      if (items.size() >= limit) break;
      auto it = s->leases.find(item.doc_id);
      if (it != s->leases.end() && it->second.reviewer != reviewer) continue;
      if (item.purpose == Purpose::double_check && e.history().reviewers(item.doc_id).count(reviewer)) continue;
      const auto expires = now + options_.lease_ttl;
      s->leases[item.doc_id] = {reviewer, expires};
      const auto& doc = s->corpus->documents[item.doc_id];
      const bool truncated = doc.body.size() > options_.excerpt_chars;
      items.push_back({{"doc_id", item.doc_id},
                       {"path", doc.path},
                       {"excerpt", truncated ? doc.body.substr(0, options_.excerpt_chars) : doc.body},
                       {"truncated", truncated},
                       {"purpose", to_string(item.purpose)},
                       {"lease_expires", rfc3339(expires)}});
    }
    return {{"session", s->id}, {"stopped", false}, {"round", e.round()}, {"items", items}};
  }

  // Body: {"doc_id": n, "reviewer": text, "verdict": "vulnerable"|"non_vulnerable"}.
  // A repeated submission for the same (doc, reviewer) returns the stored ack.
  json submit(const std::string& id, const json& body) {
    if (!body.is_object()) throw ApiError(400, "request body must be a JSON object");
    std::size_t doc_id = 0;
    std::string reviewer;
    Verdict verdict{};
    try {
      doc_id = body.at("doc_id").get<std::size_t>();
    } catch (const json::exception&) {
      throw ApiError(400, "doc_id must be a non-negative integer", "doc_id");
    }
    try {
      reviewer = body.at("reviewer").get<std::string>();
    } catch (const json::exception&) {
      throw ApiError(400, "reviewer must be a string", "reviewer");
    }
    if (reviewer.empty()) throw ApiError(400, "reviewer is required", "reviewer");
    try {
      verdict = parse_verdict(body.at("verdict").get<std::string>());
    } catch (const std::exception&) {
      throw ApiError(400, "verdict must be vulnerable or non_vulnerable", "verdict");
    }
    auto s = get(id);
    const auto key = std::make_pair(doc_id, reviewer);
    {
      std::lock_guard<std::mutex> lock(s->state_mu);
      if (auto it = s->acks.find(key); it != s->acks.end()) return it->second;
    }
    std::lock_guard<std::mutex> write(s->write_mu);
    std::unique_lock<std::mutex> state(s->state_mu);
    if (auto it = s->acks.find(key); it != s->acks.end()) return it->second;
    if (s->engine->stopped()) throw ApiError(409, "session has stopped");
    const auto now = options_.clock();
    expire_leases(*s, now);
    auto lease = s->leases.find(doc_id);
    if (lease == s->leases.end() || lease->second.reviewer != reviewer)
      throw ApiError(409, "document " + std::to_string(doc_id) + " is not leased to " + reviewer, "doc_id");
    try {
      s->engine->submit(doc_id, reviewer, verdict);
    } catch (const StateError& e) {
      throw ApiError(409, e.what(), "doc_id");
    }
    s->leases.erase(doc_id);
    const auto& event = s->engine->history().events().back();
    const std::uint64_t seq = ++s->seq;
    const auto stamp = rfc3339(now);
    json rec = {{"type", "verdict"},         {"session", s->id},       {"seq", seq},
                {"doc_id", doc_id},          {"reviewer", reviewer},   {"verdict", to_string(verdict)},
                {"purpose", to_string(event.purpose)}, {"round", event.round}, {"timestamp", stamp}};
    if (persistent()) append(*s, rec);

    if (!s->engine->stopped() && s->engine->queue().empty()) {
      s->training = true;
      auto work = std::make_unique<Session>(*s->engine);
      state.unlock();
      try {
        settle(*work);
      } catch (const std::exception& e) {
        state.lock();
        s->training = false;
        throw ApiError(500, std::string("round failed: ") + e.what());
      }
      state.lock();
      s->engine = std::move(work);
      s->training = false;
    }
    json ack = make_ack(*s, rec);
    s->acks[key] = ack;
    if (persistent() && ++s->since_snapshot >= options_.snapshot_every) {
      write_snapshot(*s);
      s->since_snapshot = 0;
    }
    return ack;
  }

  // `scope` names a session id or a corpus; empty selects the only corpus.
  json document(std::size_t doc_id, const std::string& scope = {}) const {
    std::shared_ptr<const Corpus> corpus;
    {
      std::lock_guard<std::mutex> lock(registry_mu_);
      if (auto it = sessions_.find(scope); it != sessions_.end()) corpus = it->second->corpus;
      else if (auto c = corpora_.find(scope); c != corpora_.end()) corpus = c->second;
      else if (scope.empty() && corpora_.size() == 1) corpus = corpora_.begin()->second;
    }
    if (!corpus) throw ApiError(scope.empty() ? 400 : 404, scope.empty() ? "corpus or session is required" : "unknown corpus or session '" + scope + "'");
    if (doc_id >= corpus->size()) throw ApiError(404, "unknown document " + std::to_string(doc_id));
    const auto& d = corpus->documents[doc_id];
    json j = {{"doc_id", d.doc_id}, {"path", d.path}, {"body", d.body}};
    j["crash_count"] = d.crash_count ? json(*d.crash_count) : json(nullptr);
    j["metrics"] = d.metrics ? json(*d.metrics) : json(nullptr);
    return j;
  }

  std::vector<std::string> session_ids() const {
    std::lock_guard<std::mutex> lock(registry_mu_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
  }

  // Rebuilds every session found in data_dir. Datasets must be registered
  // first under the names recorded at creation. Returns the session count.
  std::size_t recover() {
    namespace fs = std::filesystem;
    if (!persistent()) return 0;
    std::vector<fs::path> logs;
    for (const auto& entry : fs::directory_iterator(options_.data_dir))
      if (entry.path().extension() == ".ndjson") logs.push_back(entry.path());
    std::sort(logs.begin(), logs.end());
    for (const auto& p : logs) recover_one(p);
    return logs.size();
  }

 private:
  struct Lease {
    std::string reviewer;
    TimePoint expires;
  };

  struct LiveSession {
    std::string id;
    std::string corpus_ref;
    std::string features_ref;
    std::shared_ptr<const Corpus> corpus;
    std::shared_ptr<const FeatureMatrix> features;
    std::unique_ptr<Session> engine;
    std::mutex write_mu;
    mutable std::mutex state_mu;
    std::map<std::size_t, Lease> leases;
    std::map<std::pair<std::size_t, std::string>, json> acks;
    std::uint64_t seq = 0;
    bool training = false;
    std::size_t since_snapshot = 0;
    std::ofstream log;
  };

  bool persistent() const noexcept { return !options_.data_dir.empty(); }

  static std::string make_id(std::uint64_t n) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(n));
    return buf;
  }

  std::filesystem::path log_path(const std::string& id) const { return options_.data_dir / (id + ".ndjson"); }
  std::filesystem::path snapshot_path(const std::string& id) const {
    return options_.data_dir / (id + ".snapshot.json");
  }

  template <class Map>
  std::string pick_ref(const json& body, const char* key, const Map& registry) const {
    if (body.contains(key)) {
      if (!body.at(key).is_string()) throw ApiError(400, std::string(key) + " must be a string", key);
      return body.at(key).get<std::string>();
    }
    std::lock_guard<std::mutex> lock(registry_mu_);
    if (registry.size() == 1) return registry.begin()->first;
    throw ApiError(400, std::string(key) + " is required", key);
  }

  template <class Map>
  typename Map::mapped_type lookup(const Map& registry, const std::string& name, const char* what) const {
    std::lock_guard<std::mutex> lock(registry_mu_);
    auto it = registry.find(name);
    if (it == registry.end()) throw ApiError(404, std::string("unknown ") + what + " '" + name + "'", what);
    return it->second;
  }

  std::shared_ptr<LiveSession> get(const std::string& id) const {
    std::lock_guard<std::mutex> lock(registry_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(404, "unknown session '" + id + "'");
    return it->second;
  }

  static void settle(Session& e) {
    while (!e.stopped() && e.queue().empty()) e.advance();
  }

  static void expire_leases(LiveSession& s, TimePoint now) {
    for (auto it = s.leases.begin(); it != s.leases.end();) {
      if (it->second.expires <= now) it = s.leases.erase(it);
      else ++it;
    }
  }

  static json counters(const LiveSession& s) {
    const Session& e = *s.engine;
    const auto positives = e.history().positive_count();
    const auto est = e.latest_estimate();
    json j = {{"round", e.round()},
              {"labeled", e.history().labeled_count()},
              {"positives", positives},
              {"events", e.history().event_count()},
              {"cost", static_cast<double>(e.history().event_count()) / static_cast<double>(s.corpus->size())},
              {"stopped", e.stopped()}};
    j["estimate"] = est ? json(*est) : json(nullptr);
    if (positives == 0) {
      j["estimated_recall"] = 0.0;
      j["no_positives_yet"] = true;
    } else {
      j["estimated_recall"] = est ? json(static_cast<double>(positives) / std::max(*est, static_cast<double>(positives)))
                                  : json(nullptr);
      j["no_positives_yet"] = false;
    }
    return j;
  }

  static json trace_of(const LiveSession& s) {
    json out = json::array();
    const double n = static_cast<double>(s.corpus->size());
    for (const auto& r : s.engine->reports()) {
      json p = {{"round", r.round},         {"events", r.events}, {"labeled", r.labeled},
                {"positives", r.positives}, {"stop", r.stop},     {"cost", static_cast<double>(r.events) / n}};
      p["estimate"] = r.estimate ? json(*r.estimate) : json(nullptr);
      if (r.positives == 0) p["estimated_recall"] = 0.0;
      else if (r.estimate)
        p["estimated_recall"] = static_cast<double>(r.positives) / std::max(*r.estimate, static_cast<double>(r.positives));
      else p["estimated_recall"] = nullptr;
      out.push_back(p);
    }
    return out;
  }

  static json status_of(const LiveSession& s) {
    const Session& e = *s.engine;
    json j = counters(s);
    j["session"] = s.id;
    j["corpus"] = s.corpus_ref;
    j["features"] = s.features_ref;
    j["corpus_size"] = s.corpus->size();
    j["phase"] = to_string(e.phase());
    j["exhausted"] = e.exhausted();
    j["training"] = s.training;
    j["queue_length"] = e.queue().size();
    j["seq"] = s.seq;
    j["config"] = to_json(e.config());
    j["trace"] = trace_of(s);
    return j;
  }

  static json make_ack(const LiveSession& s, const json& rec) {
    json j = {{"seq", rec.at("seq")},         {"session", s.id},
              {"doc_id", rec.at("doc_id")},   {"reviewer", rec.at("reviewer")},
              {"verdict", rec.at("verdict")}, {"purpose", rec.at("purpose")},
              {"timestamp", rec.at("timestamp")}};
    j["counters"] = counters(s);
    return j;
  }

  void append(LiveSession& s, const json& rec) {
    s.log << rec.dump() << '\n';
    s.log.flush();
    if (!s.log) throw ApiError(500, "cannot append to the event log of session " + s.id);
  }

  void write_snapshot(const LiveSession& s) const {
    json acks = json::array();
    for (const auto& [key, ack] : s.acks) acks.push_back(ack);
    json j = {{"session", s.id}, {"seq", s.seq}, {"engine", s.engine->snapshot()}, {"acks", acks}};
    const auto path = snapshot_path(s.id);
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << j.dump();
      if (!out) throw ApiError(500, "cannot write snapshot for session " + s.id);
    }
    std::filesystem::rename(tmp, path);
  }

  void recover_one(const std::filesystem::path& path) {
    std::string data;
    {
      std::ifstream in(path, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      data = ss.str();
    }
    std::vector<json> records;
    std::size_t pos = 0;
    while (pos < data.size()) {
      const auto nl = data.find('\n', pos);
      if (nl == std::string::npos) {
        // Torn final write: that event was never acknowledged.
        std::filesystem::resize_file(path, pos);
        break;
      }
      const auto line = data.substr(pos, nl - pos);
      try {
        if (!line.empty()) records.push_back(json::parse(line));
      } catch (const json::parse_error&) {
        throw IngestError("corrupt event log " + path.string());
      }
      pos = nl + 1;
    }
    if (records.empty() || records.front().value("type", "") != "create")
      throw IngestError("event log " + path.string() + " lacks a create record");
    const auto& create = records.front();
    auto s = std::make_shared<LiveSession>();
    s->id = create.at("session").get<std::string>();
    s->corpus_ref = create.at("corpus").get<std::string>();
    s->features_ref = create.at("features").get<std::string>();
    try {
      s->corpus = lookup(corpora_, s->corpus_ref, "corpus");
      s->features = lookup(features_, s->features_ref, "features");
    } catch (const ApiError& e) {
      throw IngestError("recovering " + s->id + ": " + e.what());
    }
    const auto config = config_from_json(create.at("config"), SessionConfig{});

    const auto snap = snapshot_path(s->id);
    if (std::filesystem::exists(snap)) {
      std::ifstream sin(snap);
      const auto j = json::parse(sin);
      s->engine = std::make_unique<Session>(Session::restore(j.at("engine"), *s->corpus, *s->features));
      s->seq = j.at("seq").get<std::uint64_t>();
      for (const auto& ack : j.at("acks"))
        s->acks[{ack.at("doc_id").get<std::size_t>(), ack.at("reviewer").get<std::string>()}] = ack;
    } else {
      s->engine = std::make_unique<Session>(*s->corpus, *s->features, config);
    }
    for (std::size_t k = 1; k < records.size(); ++k) {
      const auto& rec = records[k];
      const auto seq = rec.at("seq").get<std::uint64_t>();
      if (seq <= s->seq) continue;
      if (seq != s->seq + 1) throw IngestError("event log " + path.string() + " has a sequence gap at " + std::to_string(seq));
      const auto doc_id = rec.at("doc_id").get<std::size_t>();
      const auto reviewer = rec.at("reviewer").get<std::string>();
      s->engine->submit(doc_id, reviewer, parse_verdict(rec.at("verdict").get<std::string>()));
      settle(*s->engine);
      s->seq = seq;
      s->acks[{doc_id, reviewer}] = make_ack(*s, rec);
    }
    s->log.open(path, std::ios::app);
    std::lock_guard<std::mutex> lock(registry_mu_);
    sessions_[s->id] = s;
    const auto n = std::stoull(s->id.substr(1));
    next_id_ = std::max<std::uint64_t>(next_id_, n + 1);
  }

  ServiceOptions options_;
  mutable std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<const Corpus>> corpora_;
  std::map<std::string, std::shared_ptr<const FeatureMatrix>> features_;
  std::map<std::string, std::shared_ptr<LiveSession>> sessions_;
  std::uint64_t next_id_ = 1;
};

}  // namespace harmless::service
