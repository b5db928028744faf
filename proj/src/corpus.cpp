#include "ttds/corpus.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace ttds {

using json = nlohmann::json;

Tower parse_tower(const std::string& s) {
  if (s == "item") return Tower::item;
  if (s == "user") return Tower::user;
  throw ConfigError("unknown tower '" + s + "' (expected item|user)");
}

namespace {

template <typename Records>
auto find_by_id(const Records& records, const std::string& id) -> decltype(&records.front()) {
  auto it = std::lower_bound(records.begin(), records.end(), id,
                             [](const auto& r, const std::string& key) { return r.entity_id < key; });
  if (it == records.end() || it->entity_id != id) return nullptr;
  return &*it;
}

std::string join_nonempty(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

// Description and categories come as strings, string arrays or nested arrays depending on dump vintage.
void flatten_strings(const json& value, std::vector<std::string>& out) {
  if (value.is_string()) {
    if (!value.get_ref<const std::string&>().empty()) out.push_back(value.get<std::string>());
  } else if (value.is_array()) {
    for (const auto& v : value) flatten_strings(v, out);
  }
}

std::string string_field(const json& rec, const char* key) {
  auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  std::vector<std::string> parts;
  flatten_strings(*it, parts);
  return join_nonempty(parts);
}

struct LineError {
  std::string reason;
};

Interaction parse_review(const std::string& line) {
  json rec = json::parse(line, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) throw LineError{"not a JSON object"};
  Interaction in;
  in.user_id = string_field(rec, "reviewerID");
  in.item_id = string_field(rec, "asin");
  if (in.user_id.empty()) throw LineError{"missing reviewerID"};
  if (in.item_id.empty()) throw LineError{"missing asin"};
  auto ts = rec.find("unixReviewTime");
  if (ts == rec.end()) throw LineError{"missing unixReviewTime"};
  if (ts->is_number_integer()) {
    in.timestamp = ts->get<std::int64_t>();
  } else if (ts->is_number_float()) {
    double v = ts->get<double>();
    if (!std::isfinite(v)) throw LineError{"non-finite unixReviewTime"};
    in.timestamp = static_cast<std::int64_t>(v);
  } else {
    throw LineError{"unixReviewTime is not a number"};
  }
  in.review_text = string_field(rec, "reviewText");
  in.summary = string_field(rec, "summary");
  return in;
}

ItemMeta parse_meta(const std::string& line) {
  json rec = json::parse(line, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) throw LineError{"not a JSON object"};
  ItemMeta m;
  m.item_id = string_field(rec, "asin");
  if (m.item_id.empty()) throw LineError{"missing asin"};
  m.title = string_field(rec, "title");
  m.description = string_field(rec, "description");
  m.brand = string_field(rec, "brand");
  std::vector<std::string> cats;
  if (auto it = rec.find("categories"); it != rec.end()) flatten_strings(*it, cats);
  if (auto it = rec.find("category"); it != rec.end()) flatten_strings(*it, cats);
  std::set<std::string> seen;
  for (auto& c : cats)
    if (seen.insert(c).second) m.categories.push_back(std::move(c));
  return m;
}

void note_malformed(CorpusStats& stats, const IngestOptions& opt, const char* stream, std::size_t line_no,
                    const std::string& reason) {
  std::string msg = std::string(stream) + ":" + std::to_string(line_no) + ": " + reason;
  if (opt.abort_on_malformed) throw DataError("malformed record at " + msg);
  ++stats.malformed;
  if (stats.malformed_samples.size() < 10) stats.malformed_samples.push_back(msg);
}

}  // namespace

const ContentRecord* Dataset::find_item(const std::string& id) const { return find_by_id(items, id); }
const ContentRecord* Dataset::find_user(const std::string& id) const { return find_by_id(users, id); }

const InteractionSequence* Dataset::find_sequence(const std::string& user_id) const {
  auto it = std::lower_bound(sequences.begin(), sequences.end(), user_id,
                             [](const auto& s, const std::string& key) { return s.user_id < key; });
  if (it == sequences.end() || it->user_id != user_id) return nullptr;
  return &*it;
}

std::vector<Interaction> dedupe_exact(std::vector<Interaction> interactions, std::size_t* removed) {
  std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
  std::vector<Interaction> out;
  out.reserve(interactions.size());
  for (auto& in : interactions) {
    if (seen.emplace(in.user_id, in.item_id, in.timestamp).second) out.push_back(std::move(in));
  }
  if (removed) *removed = interactions.size() - out.size();
  return out;
}

std::vector<Interaction> kcore_filter(std::vector<Interaction> interactions, int min_core, bool iterative,
                                      std::size_t* rounds) {
  if (min_core < 1) throw ConfigError("min_core must be >= 1");
  std::size_t r = 0;
  while (!interactions.empty()) {
    std::unordered_map<std::string, int> user_count, item_count;
    for (const auto& in : interactions) {
      ++user_count[in.user_id];
      ++item_count[in.item_id];
    }
    std::vector<Interaction> kept;
    kept.reserve(interactions.size());
    for (auto& in : interactions) {
      if (user_count[in.user_id] >= min_core && item_count[in.item_id] >= min_core) kept.push_back(std::move(in));
    }
    bool changed = kept.size() != interactions.size();
    interactions = std::move(kept);
    if (!changed) break;
    ++r;
    if (!iterative) break;
  }
  if (rounds) *rounds = r;
  return interactions;
}

std::vector<InteractionSequence> build_sequences(const std::vector<Interaction>& interactions) {
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < interactions.size(); ++i) by_user[interactions[i].user_id].push_back(i);
  std::vector<InteractionSequence> out;
  out.reserve(by_user.size());
  for (auto& [user, idx] : by_user) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return interactions[a].timestamp < interactions[b].timestamp;
    });
    InteractionSequence seq;
    seq.user_id = user;
    for (auto i : idx) {
      seq.items.push_back(interactions[i].item_id);
      seq.timestamps.push_back(interactions[i].timestamp);
      seq.summaries.push_back(interactions[i].summary);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

DatasetSplit build_splits(const std::vector<InteractionSequence>& sequences) {
  DatasetSplit split;
  std::set<std::string> items, users;
  for (const auto& seq : sequences) {
    for (const auto& it : seq.items) items.insert(it);
    users.insert(seq.user_id);
    const std::size_t n = seq.size();
    if (n < 3) {
      ++split.skipped_short;
      continue;
    }
    UserSplit u;
    u.user_id = seq.user_id;
    u.train.assign(seq.items.begin(), seq.items.end() - 2);
    u.valid = seq.items[n - 2];
    u.test = seq.items[n - 1];
    split.users.push_back(std::move(u));
  }
  std::sort(split.users.begin(), split.users.end(),
            [](const UserSplit& a, const UserSplit& b) { return a.user_id < b.user_id; });
  split.item_catalog.assign(items.begin(), items.end());
  split.user_catalog.assign(users.begin(), users.end());
  return split;
}

std::vector<std::pair<std::vector<std::string>, std::string>> training_pairs(const UserSplit& user) {
  std::vector<std::pair<std::vector<std::string>, std::string>> out;
  for (std::size_t t = 1; t < user.train.size(); ++t)
    out.emplace_back(std::vector<std::string>(user.train.begin(), user.train.begin() + t), user.train[t]);
  return out;
}

ContentRecord assemble_item_content(const ItemMeta& meta) {
  ContentRecord rec;
  rec.kind = Tower::item;
  rec.entity_id = meta.item_id;
  std::string cats = join_nonempty(meta.categories);
  rec.source_fields = {{"title", meta.title},
                       {"description", meta.description},
                       {"brand", meta.brand},
                       {"categories", cats}};
  rec.text = join_nonempty({meta.title, meta.description, meta.brand, cats});
  if (rec.text.empty()) rec.text = "item " + meta.item_id;
  return rec;
}

ContentRecord assemble_user_content(const std::string& user_id, const std::vector<Interaction>& visible,
                                    const std::map<std::string, ItemMeta>& item_meta, int recent_reviews,
                                    int top_categories) {
  std::vector<const Interaction*> ordered;
  for (const auto& in : visible) ordered.push_back(&in);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Interaction* a, const Interaction* b) { return a->timestamp < b->timestamp; });

  std::vector<std::string> summaries;
  for (auto it = ordered.rbegin(); it != ordered.rend() && static_cast<int>(summaries.size()) < recent_reviews; ++it)
    if (!(*it)->summary.empty()) summaries.push_back((*it)->summary);
  std::reverse(summaries.begin(), summaries.end());

  std::map<std::string, int> cat_count;
  for (const auto* in : ordered) {
    auto m = item_meta.find(in->item_id);
    if (m == item_meta.end()) continue;
    for (const auto& c : m->second.categories) ++cat_count[c];
  }
  std::vector<std::pair<std::string, int>> cats(cat_count.begin(), cat_count.end());
  std::stable_sort(cats.begin(), cats.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> top;
  for (std::size_t i = 0; i < cats.size() && static_cast<int>(i) < top_categories; ++i) top.push_back(cats[i].first);

  ContentRecord rec;
  rec.kind = Tower::user;
  rec.entity_id = user_id;
  std::string s = join_nonempty(summaries), c = join_nonempty(top);
  rec.source_fields = {{"summaries", s}, {"categories", c}};
  rec.text = join_nonempty({s, c});
  if (rec.text.empty()) rec.text = "user " + user_id;
  return rec;
}

Dataset build_dataset(std::vector<Interaction> interactions, const std::map<std::string, ItemMeta>& item_meta,
                      const IngestOptions& options) {
  Dataset ds;
  ds.stats.raw_interactions = interactions.size();
  interactions = dedupe_exact(std::move(interactions), &ds.stats.exact_duplicates);
  const bool had_input = !interactions.empty();
  interactions = kcore_filter(std::move(interactions), options.min_core, options.iterative_kcore,
                              &ds.stats.kcore_rounds);
  if (had_input && interactions.empty())
    throw EmptyCorpusError("no interactions survive " + std::to_string(options.min_core) + "-core filtering");
  ds.stats.kept_interactions = interactions.size();

  ds.sequences = build_sequences(interactions);
  ds.split = build_splits(ds.sequences);
  ds.stats.skipped_short = ds.split.skipped_short;
  ds.stats.users = ds.split.user_catalog.size();
  ds.stats.items = ds.split.item_catalog.size();

  for (const auto& id : ds.split.item_catalog) {
    auto it = item_meta.find(id);
    ItemMeta m;
    if (it != item_meta.end()) m = it->second;
    m.item_id = id;
    ds.items.push_back(assemble_item_content(m));
  }

  // User content only sees the train portion so held-out targets never leak into user IDs.
  std::map<std::string, std::vector<Interaction>> visible;
  for (const auto& seq : ds.sequences) {
    const std::size_t n = seq.size();
    const std::size_t keep = n >= 3 ? n - 2 : n;
    auto& v = visible[seq.user_id];
    for (std::size_t i = 0; i < keep; ++i)
      v.push_back({seq.user_id, seq.items[i], seq.timestamps[i], {}, seq.summaries[i]});
  }
  for (const auto& id : ds.split.user_catalog)
    ds.users.push_back(
        assemble_user_content(id, visible[id], item_meta, options.recent_reviews, options.top_categories));
  return ds;
}

Dataset ingest_reviews(std::istream& reviews, std::istream& metadata, const IngestOptions& options) {
  if (options.min_core < 1) throw ConfigError("min_core must be >= 1");
  CorpusStats parse_stats;
  std::vector<Interaction> interactions;
  std::map<std::string, ItemMeta> meta;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(reviews, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++parse_stats.review_lines;
    try {
      interactions.push_back(parse_review(line));
    } catch (const LineError& e) {
      note_malformed(parse_stats, options, "reviews", line_no, e.reason);
    }
  }
  line_no = 0;
  while (std::getline(metadata, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++parse_stats.meta_lines;
    try {
      ItemMeta m = parse_meta(line);
      meta.emplace(m.item_id, std::move(m));
    } catch (const LineError& e) {
      note_malformed(parse_stats, options, "metadata", line_no, e.reason);
    }
  }
  Dataset ds = build_dataset(std::move(interactions), meta, options);
  ds.stats.review_lines = parse_stats.review_lines;
  ds.stats.meta_lines = parse_stats.meta_lines;
  ds.stats.malformed = parse_stats.malformed;
  ds.stats.malformed_samples = std::move(parse_stats.malformed_samples);
  return ds;
}

// ---- persistence ------------------------------------------------------------

namespace {

json stats_to_json(const CorpusStats& s) {
  return json{{"review_lines", s.review_lines},       {"meta_lines", s.meta_lines},
              {"malformed", s.malformed},             {"exact_duplicates", s.exact_duplicates},
              {"raw_interactions", s.raw_interactions}, {"kept_interactions", s.kept_interactions},
              {"users", s.users},                     {"items", s.items},
              {"kcore_rounds", s.kcore_rounds},       {"skipped_short", s.skipped_short},
              {"malformed_samples", s.malformed_samples}};
}

CorpusStats stats_from_json(const json& j) {
  CorpusStats s;
  s.review_lines = j.value("review_lines", std::size_t{0});
  s.meta_lines = j.value("meta_lines", std::size_t{0});
  s.malformed = j.value("malformed", std::size_t{0});
  s.exact_duplicates = j.value("exact_duplicates", std::size_t{0});
  s.raw_interactions = j.value("raw_interactions", std::size_t{0});
  s.kept_interactions = j.value("kept_interactions", std::size_t{0});
  s.users = j.value("users", std::size_t{0});
  s.items = j.value("items", std::size_t{0});
  s.kcore_rounds = j.value("kcore_rounds", std::size_t{0});
  s.skipped_short = j.value("skipped_short", std::size_t{0});
  s.malformed_samples = j.value("malformed_samples", std::vector<std::string>{});
  return s;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

std::vector<json> read_jsonl(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingArtifactError("missing dataset file " + p.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError(p.string() + ":" + std::to_string(n) + ": malformed JSON");
    out.push_back(std::move(j));
  }
  return out;
}

void write_content(const std::vector<ContentRecord>& recs, const std::map<std::string, int>* clusters,
                   const std::filesystem::path& p) {
  auto out = open_out(p);
  for (const auto& r : recs) {
    json j{{"entity_id", r.entity_id}, {"kind", tower_name(r.kind)}, {"text", r.text},
           {"source_fields", r.source_fields}};
    if (clusters) {
      if (auto it = clusters->find(r.entity_id); it != clusters->end()) j["cluster"] = it->second;
    }
    out << j.dump() << '\n';
  }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_content(ds.items, &ds.item_cluster, dir / "items.jsonl");
  write_content(ds.users, nullptr, dir / "users.jsonl");
  {
    auto out = open_out(dir / "sequences.jsonl");
    for (const auto& s : ds.sequences)
      out << json{{"user_id", s.user_id}, {"items", s.items}, {"timestamps", s.timestamps},
                  {"summaries", s.summaries}}
                 .dump()
          << '\n';
  }
  {
    auto out = open_out(dir / "splits.jsonl");
    for (const auto& u : ds.split.users)
      out << json{{"user_id", u.user_id}, {"train", u.train}, {"valid", u.valid}, {"test", u.test}}.dump() << '\n';
  }
  auto out = open_out(dir / "stats.json");
  out << stats_to_json(ds.stats).dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "stats.json"))
    throw MissingArtifactError("dataset not found: " + (dir / "stats.json").string());
  Dataset ds;
  for (const auto& j : read_jsonl(dir / "items.jsonl")) {
    ContentRecord r;
    r.kind = Tower::item;
    r.entity_id = j.at("entity_id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.source_fields = j.at("source_fields").get<std::map<std::string, std::string>>();
    if (j.contains("cluster")) ds.item_cluster[r.entity_id] = j["cluster"].get<int>();
    ds.items.push_back(std::move(r));
  }
  for (const auto& j : read_jsonl(dir / "users.jsonl")) {
    ContentRecord r;
    r.kind = Tower::user;
    r.entity_id = j.at("entity_id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.source_fields = j.at("source_fields").get<std::map<std::string, std::string>>();
    ds.users.push_back(std::move(r));
  }
  for (const auto& j : read_jsonl(dir / "sequences.jsonl")) {
    InteractionSequence s;
    s.user_id = j.at("user_id").get<std::string>();
    s.items = j.at("items").get<std::vector<std::string>>();
    s.timestamps = j.at("timestamps").get<std::vector<std::int64_t>>();
    s.summaries = j.at("summaries").get<std::vector<std::string>>();
    ds.sequences.push_back(std::move(s));
  }
  ds.split = build_splits(ds.sequences);
  std::ifstream st(dir / "stats.json");
  ds.stats = stats_from_json(json::parse(st));
  return ds;
}

}  // namespace ttds
