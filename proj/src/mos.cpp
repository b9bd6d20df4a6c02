#include "qgan/mos.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "qgan/synthetic.hpp"

namespace qgan::mos {

using nlohmann::json;

Study create_study(std::vector<ImageEntry> images, double probe_fraction, std::uint64_t seed, std::string id) {
  if (images.empty()) throw Error(422, "study manifest is empty");
  if (!(probe_fraction > 0.0 && probe_fraction <= 0.5)) throw Error(422, "probe_fraction must be in (0, 0.5]");
  std::set<std::string> ids;
  for (const auto& im : images) {
    if (im.id.empty()) throw Error(422, "image id must not be empty");
    if (!ids.insert(im.id).second) throw Error(422, "duplicate image id '" + im.id + "'");
  }
  Study s;
  s.id = std::move(id);
  s.probe_fraction = probe_fraction;
  s.seed = seed;
  s.images = std::move(images);

  const std::size_t n = s.images.size();
  const auto k = std::size_t(std::llround(probe_fraction * double(n)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  synthetic::Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  s.probes.assign(idx.begin(), idx.begin() + std::ptrdiff_t(k));
  std::sort(s.probes.begin(), s.probes.end());
  return s;
}

Session create_session(const Study& study, std::string id, std::string rater, std::uint64_t ordinal) {
  Session s;
  s.id = std::move(id);
  s.study = study.id;
  s.rater = std::move(rater);
  synthetic::Rng rng(study.seed * 0x9e3779b97f4a7c15ULL + ordinal + 1);
  const std::size_t n = study.images.size();
  for (std::size_t i = 0; i < n; ++i) s.order.push_back({i, false});
  for (std::size_t i = n; i > 1; --i) std::swap(s.order[i - 1], s.order[rng.index(i)]);
  for (std::size_t p : study.probes) {
    const auto first = std::find_if(s.order.begin(), s.order.end(), [&](const Item& it) { return it.image == p; });
    const std::size_t after = std::size_t(first - s.order.begin()) + 1;
    const std::size_t at = after + rng.index(s.order.size() - after + 1);
    s.order.insert(s.order.begin() + std::ptrdiff_t(at), Item{p, true});
  }
  return s;
}

void submit_rating(Session& s, std::size_t item, int score) {
  if (score < 1 || score > 5) throw Error(422, "score must be an integer in 1..5");
  if (item >= s.order.size()) throw Error(404, "item " + std::to_string(item) + " does not exist");
  if (item < s.cursor()) throw Error(409, "item " + std::to_string(item) + " is already rated");
  if (item > s.cursor()) throw Error(400, "item " + std::to_string(item) + " is not the current item " +
                                              std::to_string(s.cursor()));
  s.ratings.push_back(score);
}

namespace {

bool consistent(const Session& s, int tolerance) {
  std::map<std::size_t, int> first;
  for (std::size_t i = 0; i < s.ratings.size(); ++i) {
    const Item& it = s.order[i];
    if (!it.probe) {
      first[it.image] = s.ratings[i];
      continue;
    }
    const auto f = first.find(it.image);
    if (f != first.end() && std::abs(f->second - s.ratings[i]) > tolerance) return false;
  }
  return true;
}

}  // namespace

FilterResult consistency_filter(const std::vector<Session>& sessions, const Study& study, int tolerance) {
  if (tolerance < 0) throw Error(422, "tolerance must be >= 0");
  FilterResult r;
  for (const Session& s : sessions) {
    if (s.study != study.id) throw Error(422, "session " + s.id + " belongs to another study");
    if (!s.completed()) throw Error(409, "session " + s.id + " is not completed");
    (consistent(s, tolerance) ? r.kept : r.removed).push_back(s);
  }
  return r;
}

Report aggregate(const std::vector<Session>& kept, const Study& study, std::size_t removed) {
  if (kept.empty()) throw Error(409, "no kept sessions to aggregate");
  struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
    std::set<std::string> raters;
  };
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const Session& s : kept)
    for (std::size_t i = 0; i < s.ratings.size(); ++i) {
      if (s.order[i].probe) continue;
      const ImageEntry& im = study.images.at(s.order[i].image);
      Acc& a = acc[{im.task, im.method}];
      a.sum += s.ratings[i];
      ++a.n;
      a.raters.insert(s.id);
    }
  Report r;
  r.kept = kept.size();
  r.removed = removed;
  for (const auto& [key, a] : acc)
    r.rows.push_back({key.second, key.first, a.sum / double(a.n), a.n, a.raters.size(), removed});
  return r;
}

json to_json(const Report& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"method", row.method},
                    {"task", row.task},
                    {"mean", row.mean},
                    {"ratings", row.ratings},
                    {"raters", row.raters},
                    {"removed_raters", row.removed}});
  return {{"rows", rows}, {"kept_raters", r.kept}, {"removed_raters", r.removed}};
}

json next_payload(const Session& s) {
  json j{{"session", s.id}, {"total", s.order.size()}, {"completed", s.completed()}};
  if (s.completed()) {
    j["item"] = nullptr;
    j["image"] = nullptr;
  } else {
    j["item"] = s.cursor();
    j["image"] = "/sessions/" + s.id + "/items/" + std::to_string(s.cursor()) + "/image";
  }
  return j;
}

// ---- store --------------------------------------------------------------------------

namespace {

json image_json(const ImageEntry& im) {
  return {{"id", im.id}, {"method", im.method}, {"task", im.task}, {"path", im.path}};
}

ImageEntry image_from_json(const json& j) {
  if (!j.is_object() || !j.contains("id") || !j.contains("method") || !j.contains("task"))
    throw Error(400, "each image needs id, method and task");
  return {j.at("id").get<std::string>(), j.at("method").get<std::string>(), j.at("task").get<std::string>(),
          j.value("path", std::string())};
}

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Store::Store(std::filesystem::path log, int tolerance) : path_(std::move(log)), tolerance_(tolerance) {
  std::random_device rd;
  token_state_ = (std::uint64_t(rd()) << 32) ^ rd();
  if (path_.empty()) return;
  if (std::ifstream in(path_); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json event;
      try {
        event = json::parse(line);
      } catch (const json::parse_error&) {
        break;  // torn final write
      }
      apply(event);
    }
  }
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  log_.open(path_, std::ios::app);
  if (!log_) throw std::runtime_error("cannot open event log " + path_.string());
}

void Store::apply(const json& e) {
  const std::string type = e.at("event");
  if (type == "study_created") {
    std::vector<ImageEntry> images;
    for (const auto& im : e.at("images")) images.push_back(image_from_json(im));
    const std::string id = e.at("study");
    studies_[id] = create_study(std::move(images), e.at("probe_fraction"), e.at("seed"), id);
  } else if (type == "session_created") {
    const std::string id = e.at("session"), study = e.at("study");
    sessions_[id] = create_session(studies_.at(study), id, e.at("rater"), e.at("ordinal"));
    study_sessions_[study].push_back(id);
  } else if (type == "rating") {
    submit_rating(sessions_.at(e.at("session")), e.at("item"), e.at("score"));
  } else if (type != "completed") {
    throw std::runtime_error("unknown event '" + type + "'");
  }
}

void Store::append(const json& event) {
  if (!log_.is_open()) return;
  log_ << event.dump() << '\n';
  log_.flush();
}

std::string Store::fresh_id(const std::string& prefix) {
  std::ostringstream os;
  os << prefix << std::hex << std::setw(16) << std::setfill('0') << splitmix(token_state_);
  return os.str();
}

Study Store::add_study(std::vector<ImageEntry> images, double probe_fraction, std::uint64_t seed) {
  std::lock_guard lock(mutex_);
  std::string id = fresh_id("st-");
  Study s = create_study(images, probe_fraction, seed, id);
  json list = json::array();
  for (const auto& im : s.images) list.push_back(image_json(im));
  studies_[id] = s;
  append({{"event", "study_created"}, {"study", id}, {"images", list}, {"probe_fraction", probe_fraction},
          {"seed", seed}, {"probes", s.probes}});
  return s;
}

Session Store::add_session(const std::string& study, const std::string& rater) {
  std::lock_guard lock(mutex_);
  const auto st = studies_.find(study);
  if (st == studies_.end()) throw Error(404, "unknown study " + study);
  auto& list = study_sessions_[study];
  const std::string id = fresh_id("se-");
  Session s = create_session(st->second, id, rater, list.size());
  append({{"event", "session_created"}, {"session", id}, {"study", study}, {"rater", rater}, {"ordinal", list.size()}});
  list.push_back(id);
  sessions_[id] = s;
  return s;
}

Session Store::rate(const std::string& session, std::size_t item, int score) {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session);
  if (it == sessions_.end()) throw Error(404, "unknown session " + session);
  submit_rating(it->second, item, score);
  append({{"event", "rating"}, {"session", session}, {"item", item}, {"score", score}});
  if (it->second.completed()) append({{"event", "completed"}, {"session", session}});
  return it->second;
}

Session Store::session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(404, "unknown session " + id);
  return it->second;
}

Study Store::study(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = studies_.find(id);
  if (it == studies_.end()) throw Error(404, "unknown study " + id);
  return it->second;
}

std::vector<std::string> Store::study_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : studies_) out.push_back(id);
  return out;
}

Report Store::report(const std::string& study) const {
  std::lock_guard lock(mutex_);
  const auto st = studies_.find(study);
  if (st == studies_.end()) throw Error(404, "unknown study " + study);
  std::vector<Session> done;
  if (const auto list = study_sessions_.find(study); list != study_sessions_.end())
    for (const auto& id : list->second)
      if (sessions_.at(id).completed()) done.push_back(sessions_.at(id));
  const FilterResult f = consistency_filter(done, st->second, tolerance_);
  return aggregate(f.kept, st->second, f.removed.size());
}

std::string Store::image_path(const std::string& session, std::size_t item) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session);
  if (it == sessions_.end()) throw Error(404, "unknown session " + session);
  if (item >= it->second.order.size()) throw Error(404, "item out of range");
  const std::string& p = studies_.at(it->second.study).images.at(it->second.order[item].image).path;
  if (p.empty()) throw Error(404, "no image file for this item");
  return p;
}

}  // namespace qgan::mos
