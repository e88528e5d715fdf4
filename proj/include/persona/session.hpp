#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/error.hpp"
#include "persona/io.hpp"

namespace persona {

struct PromptRevision {
  std::string text;
  std::string timestamp;
  std::string report_id;  // empty when the prompt was used without scoring

  friend bool operator==(const PromptRevision&, const PromptRevision&) = default;
};

struct TranscriptEntry {
  std::string role;
  std::string content;
  std::string timestamp;

  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

/// One user's prompt-design loop: prompt revisions, their reports, and the
/// chat transcript for the current prompt.
struct DesignSession {
  std::string id;
  std::string avatar_id;
  std::string created_at;
  std::vector<PromptRevision> revisions;
  std::vector<TranscriptEntry> transcript;
  std::string active_report_id;
  std::map<std::string, nlohmann::json> reports;
  std::size_t event_count = 0;

  const PromptRevision* current_revision() const { return revisions.empty() ? nullptr : &revisions.back(); }

  friend bool operator==(const DesignSession&, const DesignSession&) = default;
};

inline nlohmann::json to_json(const DesignSession& s) {
  nlohmann::json j;
  j["session_id"] = s.id;
  j["avatar_id"] = s.avatar_id;
  j["created_at"] = s.created_at;
  j["revisions"] = nlohmann::json::array();
  for (const auto& r : s.revisions) {
    j["revisions"].push_back({{"text", r.text}, {"timestamp", r.timestamp}, {"report_id", r.report_id}});
  }
  j["transcript"] = nlohmann::json::array();
  for (const auto& t : s.transcript) {
    j["transcript"].push_back({{"role", t.role}, {"content", t.content}, {"timestamp", t.timestamp}});
  }
  j["active_report_id"] = s.active_report_id.empty() ? nlohmann::json(nullptr) : nlohmann::json(s.active_report_id);
  j["reports"] = s.reports;
  j["event_count"] = s.event_count;
  return j;
}

inline DesignSession session_from_json(const nlohmann::json& j) {
  try {
    DesignSession s;
    s.id = j.at("session_id").get<std::string>();
    s.avatar_id = j.at("avatar_id").get<std::string>();
    s.created_at = j.at("created_at").get<std::string>();
    for (const auto& r : j.at("revisions")) {
      s.revisions.push_back(
          {r.at("text").get<std::string>(), r.at("timestamp").get<std::string>(), r.at("report_id").get<std::string>()});
    }
    for (const auto& t : j.at("transcript")) {
      s.transcript.push_back(
          {t.at("role").get<std::string>(), t.at("content").get<std::string>(), t.at("timestamp").get<std::string>()});
    }
    if (!j.at("active_report_id").is_null()) s.active_report_id = j.at("active_report_id").get<std::string>();
    s.reports = j.at("reports").get<std::map<std::string, nlohmann::json>>();
    s.event_count = j.at("event_count").get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_document, std::string("session snapshot: ") + e.what());
  }
}

/// Applies one logged event. All state changes go through here, so replaying
/// the log from an empty session rebuilds the exact state.
inline void apply_event(DesignSession& s, const nlohmann::json& event) {
  try {
    const auto type = event.at("type").get<std::string>();
    const auto ts = event.at("timestamp").get<std::string>();
    if (type == "created") {
      s.id = event.at("session_id").get<std::string>();
      s.avatar_id = event.at("avatar_id").get<std::string>();
      s.created_at = ts;
    } else if (type == "revision") {
      const auto text = event.at("text").get<std::string>();
      const auto report_id = event.at("report_id").get<std::string>();
      const bool changed = s.revisions.empty() || s.revisions.back().text != text;
      if (changed) s.transcript.clear();
      s.revisions.push_back({text, ts, report_id});
      if (!report_id.empty()) {
        s.reports[report_id] = event.at("report");
        s.active_report_id = report_id;
      } else if (changed) {
        s.active_report_id.clear();
      }
    } else if (type == "chat") {
      s.transcript.push_back({"user", event.at("message").get<std::string>(), ts});
      s.transcript.push_back({"assistant", event.at("reply").get<std::string>(), ts});
    } else {
      throw Error(ErrorCode::malformed_document, "unknown session event '" + type + "'");
    }
    ++s.event_count;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_document, std::string("session event: ") + e.what());
  }
}

/// Rebuilds a session from its event lines alone.
inline DesignSession replay_events(const std::vector<nlohmann::json>& events) {
  DesignSession s;
  for (const auto& e : events) apply_event(s, e);
  return s;
}

/// Sessions keyed by opaque id. Each session has an append-only JSON-lines
/// event log (<dir>/<id>.events.jsonl) and a periodic snapshot
/// (<dir>/<id>.snapshot.json). With an empty directory nothing is persisted.
class SessionStore {
 public:
  using Clock = std::function<std::string()>;

  explicit SessionStore(std::filesystem::path dir = {}, Clock clock = {}, std::size_t snapshot_every = 16)
      : dir_(std::move(dir)), clock_(std::move(clock)), snapshot_every_(snapshot_every) {
    if (!clock_) clock_ = [] { return std::string(); };
    if (!dir_.empty()) {
      std::filesystem::create_directories(dir_);
      load_all();
    }
  }

  std::string create(const std::string& avatar_id) {
    if (avatar_id.empty()) throw Error(ErrorCode::invalid_argument, "avatar_id must be non-empty");
    auto entry = std::make_shared<Entry>();
    std::string id;
    {
      std::lock_guard<std::mutex> lock(mu_);
      do {
        id = new_id();
      } while (sessions_.count(id));
      sessions_[id] = entry;
    }
    std::lock_guard<std::mutex> lock(entry->mu);
    append(*entry, id, {{"type", "created"}, {"session_id", id}, {"avatar_id", avatar_id}});
    return id;
  }

  DesignSession get(const std::string& id) const {
    auto e = find(id);
    std::lock_guard<std::mutex> lock(e->mu);
    return e->state;
  }

  /// Runs fn with the session locked, so per-session operations are serialized.
  template <typename Fn>
  auto with_session(const std::string& id, Fn&& fn) {
    auto e = find(id);
    std::lock_guard<std::mutex> lock(e->mu);
    Handle h{*this, *e, id};
    return fn(h);
  }

  struct Entry {
    std::mutex mu;
    DesignSession state;
  };

  class Handle {
   public:
    const DesignSession& state() const { return entry_.state; }

    std::string next_report_id() const { return "r" + std::to_string(entry_.state.reports.size() + 1); }

    void add_revision(const std::string& text, const std::string& report_id, const nlohmann::json& report) {
      store_.append(entry_, id_,
                    {{"type", "revision"}, {"text", text}, {"report_id", report_id}, {"report", report}});
    }

    void add_chat(const std::string& message, const std::string& reply) {
      store_.append(entry_, id_, {{"type", "chat"}, {"message", message}, {"reply", reply}});
    }

   private:
    friend class SessionStore;
    Handle(SessionStore& store, SessionStore::Entry& entry, std::string id)
        : store_(store), entry_(entry), id_(std::move(id)) {}
    SessionStore& store_;
    SessionStore::Entry& entry_;
    std::string id_;
  };

  std::vector<std::string> ids() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
  }

  std::filesystem::path log_path(const std::string& id) const { return dir_ / (id + ".events.jsonl"); }
  std::filesystem::path snapshot_path(const std::string& id) const { return dir_ / (id + ".snapshot.json"); }

  /// Every event of a persisted session, in order.
  std::vector<nlohmann::json> read_log(const std::string& id) const {
    std::vector<nlohmann::json> events;
    std::ifstream in(log_path(id));
    if (!in) throw Error(ErrorCode::not_found, "no event log for session '" + id + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        events.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::parse_error&) {
        break;  // torn final line from a crash; everything before it is intact
      }
    }
    return events;
  }

 private:
  std::shared_ptr<Entry> find(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  void append(Entry& e, const std::string& id, nlohmann::json event) {
    event["seq"] = e.state.event_count + 1;
    event["timestamp"] = clock_();
    DesignSession next = e.state;
    apply_event(next, event);
    if (!dir_.empty()) {
      std::ofstream out(log_path(id), std::ios::app | std::ios::binary);
      out << event.dump() + "\n";
      out.flush();
      if (!out) throw Error(ErrorCode::config_error, "cannot append to " + log_path(id).string());
    }
    e.state = std::move(next);
    if (!dir_.empty() && snapshot_every_ > 0 && e.state.event_count % snapshot_every_ == 0) {
      io::write_file_atomic(snapshot_path(id), to_json(e.state).dump() + "\n");
    }
  }

  // Snapshot first, then any events logged after it.
  void load_all() {
    for (const auto& f : std::filesystem::directory_iterator(dir_)) {
      const auto name = f.path().filename().string();
      const std::string suffix = ".events.jsonl";
      if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
        continue;
      }
      const auto id = name.substr(0, name.size() - suffix.size());
      auto entry = std::make_shared<Entry>();
      if (std::filesystem::exists(snapshot_path(id))) entry->state = session_from_json(io::read_json(snapshot_path(id)));
      for (const auto& ev : read_log(id)) {
        if (ev.at("seq").get<std::size_t>() > entry->state.event_count) apply_event(entry->state, ev);
      }
      sessions_[id] = entry;
    }
  }

  std::string new_id() {
    static const char* kHex = "0123456789abcdef";
    std::string id = "s";
    for (int i = 0; i < 24; ++i) id += kHex[rng_() & 15];
    return id;
  }

  std::filesystem::path dir_;
  Clock clock_;
  std::size_t snapshot_every_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mt19937_64 rng_{std::random_device{}()};
};

}  // namespace persona
