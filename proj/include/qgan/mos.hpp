#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace qgan::mos {

/// Errors carry the HTTP status they map to.
class Error : public std::runtime_error {
 public:
  Error(int status, const std::string& what) : std::runtime_error(what), status(status) {}
  int status;
};

struct ImageEntry {
  std::string id;
  std::string method;
  std::string task;
  std::string path;  // file served to raters; may be empty in tests
};

struct Study {
  std::string id;
  std::vector<ImageEntry> images;
  double probe_fraction = 0.1;
  std::uint64_t seed = 0;
  std::vector<std::size_t> probes;  // image indices shown twice
};

/// Draws round(fraction * n) probe images. Pure in (images, fraction, seed).
Study create_study(std::vector<ImageEntry> images, double probe_fraction, std::uint64_t seed, std::string id = "study");

struct Item {
  std::size_t image = 0;
  bool probe = false;  // second showing of a probed image
};

struct Session {
  std::string id;
  std::string study;
  std::string rater;
  std::vector<Item> order;
  std::vector<int> ratings;  // one per presented item, in order
  bool completed() const { return ratings.size() == order.size(); }
  std::size_t cursor() const { return ratings.size(); }
};

/// Seeded permutation of every image with each probe's duplicate inserted at a
/// random later position. `ordinal` distinguishes sessions of one study.
Session create_session(const Study& study, std::string id, std::string rater, std::uint64_t ordinal);

/// Stores a 1..5 score for the current item. Rejects out-of-range scores (422),
/// items already rated (409) and items past the current one (400).
void submit_rating(Session& s, std::size_t item, int score);

struct FilterResult {
  std::vector<Session> kept, removed;
};

/// A rater is removed iff some probe pair differs by more than `tolerance`.
FilterResult consistency_filter(const std::vector<Session>& sessions, const Study& study, int tolerance = 0);

struct ReportRow {
  std::string method;
  std::string task;
  double mean = 0.0;
  std::size_t ratings = 0;
  std::size_t raters = 0;
  std::size_t removed = 0;
};

struct Report {
  std::vector<ReportRow> rows;  // sorted by (task, method)
  std::size_t kept = 0;
  std::size_t removed = 0;
};

/// Means over non-probe presentations of kept sessions.
Report aggregate(const std::vector<Session>& kept, const Study& study, std::size_t removed = 0);

nlohmann::json to_json(const Report& r);

/// Rater-visible description of a session's current item: index, image URL,
/// progress. Contains no method or task labels.
nlohmann::json next_payload(const Session& s);

/// Thread-safe study registry backed by an append-only JSON-lines event log.
class Store {
 public:
  /// Replays `log` when it exists, then appends new events to it. An empty
  /// path keeps everything in memory.
  explicit Store(std::filesystem::path log = {}, int tolerance = 0);

  Study add_study(std::vector<ImageEntry> images, double probe_fraction, std::uint64_t seed);
  Session add_session(const std::string& study, const std::string& rater);
  Session rate(const std::string& session, std::size_t item, int score);
  Session session(const std::string& id) const;
  Study study(const std::string& id) const;
  Report report(const std::string& study) const;
  std::vector<std::string> study_ids() const;
  /// Path of the image behind a session's item (404 when unknown).
  std::string image_path(const std::string& session, std::size_t item) const;

 private:
  void apply(const nlohmann::json& event);
  void append(const nlohmann::json& event);
  std::string fresh_id(const std::string& prefix);

  mutable std::mutex mutex_;
  std::filesystem::path path_;
  std::ofstream log_;
  int tolerance_;
  std::map<std::string, Study> studies_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, std::vector<std::string>> study_sessions_;
  std::uint64_t token_state_;
};

/// HTTP JSON front end over a Store:
///   POST /studies                      {images:[{id,method,task,path}], probe_fraction, seed}
///   POST /studies/{id}/sessions        {rater}
///   GET  /sessions/{id}/next
///   GET  /sessions/{id}/items/{k}/image
///   POST /sessions/{id}/ratings        {item, score}
///   GET  /studies/{id}/report
class HttpService {
 public:
  explicit HttpService(Store& store);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds (port 0 picks a free one) and serves on a background thread; returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace qgan::mos
