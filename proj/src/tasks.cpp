#include "ttds/tasks.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace ttds {

const char* family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::seqrec: return "seqrec";
    case TaskFamily::user_pred: return "user_pred";
    case TaskFamily::preference: return "preference";
  }
  return "?";
}

TaskFamily parse_family(const std::string& s) {
  if (s == "seqrec") return TaskFamily::seqrec;
  if (s == "user_pred") return TaskFamily::user_pred;
  if (s == "preference") return TaskFamily::preference;
  throw ConfigError("unknown task family '" + s + "'");
}

namespace {

struct Segment {
  bool placeholder = false;
  std::string text;  // literal text or placeholder name
};

std::vector<Segment> split_template(const std::string& text) {
  std::vector<Segment> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find('{', pos);
    if (open == std::string::npos) {
      out.push_back({false, text.substr(pos)});
      break;
    }
    const auto close = text.find('}', open);
    if (close == std::string::npos) throw ConfigError("template has an unclosed '{': " + text);
    if (open > pos) out.push_back({false, text.substr(pos, open - pos)});
    out.push_back({true, text.substr(open + 1, close - open - 1)});
    pos = close + 1;
  }
  return out;
}

std::vector<std::string> placeholders(const std::string& text) {
  std::vector<std::string> names;
  for (const auto& s : split_template(text))
    if (s.placeholder) names.push_back(s.text);
  return names;
}

void append(std::vector<TokenId>& dst, const std::vector<TokenId>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

std::vector<TokenId> entity_tokens(const IndexAssignment& a, const std::string& entity, const Vocabulary& vocab) {
  return id_tokens(a.id_of(entity), vocab);
}

template <typename Fill>
PromptInstance render(const PromptTemplate& tmpl, const Vocabulary& vocab, Fill&& fill) {
  if (!vocab.extended()) throw StateError("prompts need a vocabulary extended with semantic tokens");
  PromptInstance inst;
  inst.family = tmpl.family;
  inst.template_id = tmpl.id;
  inst.tokens.push_back(Vocabulary::kBos);
  for (const auto& seg : split_template(tmpl.text)) {
    if (seg.placeholder)
      append(inst.tokens, fill(seg.text));
    else
      append(inst.tokens, encode_text(seg.text, vocab));
  }
  return inst;
}

void attach_target(PromptInstance& inst, std::vector<TokenId> target) {
  inst.loss_mask.assign(inst.tokens.size(), 0);
  inst.target = std::move(target);
  append(inst.tokens, inst.target);
  inst.loss_mask.resize(inst.tokens.size(), 1);
}

std::vector<std::string> recent(const std::vector<std::string>& xs, int cap) {
  const std::size_t keep = std::min(xs.size(), static_cast<std::size_t>(std::max(cap, 0)));
  return {xs.end() - static_cast<std::ptrdiff_t>(keep), xs.end()};
}

}  // namespace

void PromptTemplate::validate() const {
  if (id.empty()) throw ConfigError("template without id");
  std::vector<std::string> required, allowed;
  switch (family) {
    case TaskFamily::seqrec:
      required = {"history"};
      allowed = {"history", "user_id"};
      break;
    case TaskFamily::user_pred:
      required = {"item_id", "user_list"};
      allowed = required;
      break;
    case TaskFamily::preference:
      required = {"user_id"};
      allowed = {"user_id", "history"};
      break;
  }
  const auto names = placeholders(text);
  for (const auto& n : names)
    if (std::find(allowed.begin(), allowed.end(), n) == allowed.end())
      throw ConfigError("template " + id + ": placeholder {" + n + "} is not valid for family " + family_name(family));
  for (const auto& r : required)
    if (std::find(names.begin(), names.end(), r) == names.end())
      throw ConfigError("template " + id + ": missing placeholder {" + r + "}");
}

std::vector<PromptTemplate> parse_templates(std::istream& in) {
  std::vector<PromptTemplate> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ConfigError("template line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    PromptTemplate t{line.substr(0, t1), parse_family(line.substr(t1 + 1, t2 - t1 - 1)), line.substr(t2 + 1)};
    t.validate();
    for (const auto& prev : out)
      if (prev.id == t.id) throw ConfigError("duplicate template id " + t.id);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("template file not found: " + path.string());
  auto t = parse_templates(in);
  if (t.empty()) throw ConfigError("template file " + path.string() + " holds no templates");
  return t;
}

std::vector<PromptTemplate> templates_for(const std::vector<PromptTemplate>& all, TaskFamily family) {
  std::vector<PromptTemplate> out;
  for (const auto& t : all)
    if (t.family == family) out.push_back(t);
  return out;
}

PromptInstance render_seqrec(const std::string& user, const std::vector<std::string>& history,
                             const std::string* target, const IndexAssignment& items, const IndexAssignment& users,
                             const Vocabulary& vocab, const PromptTemplate& tmpl, const RenderLimits& limits) {
  if (tmpl.family != TaskFamily::seqrec) throw ConfigError("template " + tmpl.id + " is not a seqrec template");
  if (history.empty()) throw DataError("seqrec prompt for " + user + " has an empty history");
  const auto shown = recent(history, limits.history_cap);
  PromptInstance inst = render(tmpl, vocab, [&](const std::string& name) {
    std::vector<TokenId> out;
    if (name == "user_id") return entity_tokens(users, user, vocab);
    for (const auto& item : shown) append(out, entity_tokens(items, item, vocab));
    return out;
  });
  inst.entities.emplace_back(Tower::user, user);
  if (target) {
    attach_target(inst, entity_tokens(items, *target, vocab));
    inst.entities.emplace_back(Tower::item, *target);
  } else {
    inst.loss_mask.assign(inst.tokens.size(), 0);
  }
  return inst;
}

std::optional<PromptInstance> render_user_prediction(const std::string& item, const std::vector<std::string>& purchasers,
                                                     const IndexAssignment& items, const IndexAssignment& users,
                                                     const Vocabulary& vocab, const PromptTemplate& tmpl,
                                                     const RenderLimits& limits) {
  if (tmpl.family != TaskFamily::user_pred) throw ConfigError("template " + tmpl.id + " is not a user_pred template");
  if (purchasers.size() < 2) return std::nullopt;
  const std::vector<std::string> before(purchasers.begin(), purchasers.end() - 1);
  const auto shown = recent(before, limits.history_cap);
  PromptInstance inst = render(tmpl, vocab, [&](const std::string& name) {
    if (name == "item_id") return entity_tokens(items, item, vocab);
    std::vector<TokenId> out;
    for (const auto& u : shown) append(out, entity_tokens(users, u, vocab));
    return out;
  });
  attach_target(inst, entity_tokens(users, purchasers.back(), vocab));
  inst.entities.emplace_back(Tower::item, item);
  inst.entities.emplace_back(Tower::user, purchasers.back());
  return inst;
}

std::optional<PromptInstance> render_preference(const std::string& user, const std::vector<std::string>& history,
                                                const std::string& summary, const IndexAssignment& items,
                                                const IndexAssignment& users, const Vocabulary& vocab,
                                                const PromptTemplate& tmpl, const RenderLimits& limits) {
  if (tmpl.family != TaskFamily::preference)
    throw ConfigError("template " + tmpl.id + " is not a preference template");
  auto target = encode_text(summary, vocab);
  if (target.empty()) return std::nullopt;
  if (static_cast<int>(target.size()) > limits.summary_cap) target.resize(static_cast<std::size_t>(limits.summary_cap));
  const auto shown = recent(history, limits.history_cap);
  PromptInstance inst = render(tmpl, vocab, [&](const std::string& name) {
    if (name == "user_id") return entity_tokens(users, user, vocab);
    std::vector<TokenId> out;
    for (const auto& item : shown) append(out, entity_tokens(items, item, vocab));
    return out;
  });
  attach_target(inst, std::move(target));
  inst.entities.emplace_back(Tower::user, user);
  return inst;
}

std::map<std::string, std::vector<std::string>> item_purchasers(const Dataset& data) {
  std::map<std::string, std::vector<std::pair<std::int64_t, std::string>>> events;
  for (const auto& u : data.split.users) {
    const auto* seq = data.find_sequence(u.user_id);
    if (!seq) throw DataError("split user " + u.user_id + " has no sequence");
    for (std::size_t i = 0; i < u.train.size(); ++i) events[seq->items[i]].emplace_back(seq->timestamps[i], u.user_id);
  }
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [item, ev] : events) {
    std::sort(ev.begin(), ev.end());
    auto& users = out[item];
    for (auto& e : ev)
      if (users.empty() || users.back() != e.second) users.push_back(std::move(e.second));
  }
  return out;
}

double TaskMix::weight(TaskFamily f) const {
  switch (f) {
    case TaskFamily::seqrec: return seqrec;
    case TaskFamily::user_pred: return user_pred;
    case TaskFamily::preference: return preference;
  }
  return 0.0;
}

void TaskMix::validate() const {
  for (double w : {seqrec, user_pred, preference})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("task mix weights must be finite and >= 0");
  if (seqrec + user_pred + preference <= 0.0) throw ConfigError("task mix weights are all zero");
}

std::size_t TrainingStream::size() const {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.size();
  return n;
}

namespace {

struct SampleSpec {
  TaskFamily family;
  std::size_t index;  // into the family's pool
};

}  // namespace

TrainingStream build_training_stream(const Dataset& data, const Vocabulary& vocab, const IndexAssignment& items,
                                     const IndexAssignment& users, const std::vector<PromptTemplate>& templates,
                                     const StreamConfig& cfg, std::uint64_t seed) {
  cfg.mix.validate();
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (data.split.users.empty()) throw EmptyCorpusError("training stream requested on an empty split");
  std::mt19937_64 rng(seed);
  TrainingStream stream;

  struct SeqPair {
    const std::string* user;
    std::vector<std::string> history;
    const std::string* target;
  };
  struct PrefSpec {
    const std::string* user;
    std::vector<std::string> history;
    std::string summary;
  };
  std::vector<SeqPair> seq;
  std::vector<PrefSpec> pref;
  for (const auto& u : data.split.users) {
    for (std::size_t i = 1; i < u.train.size(); ++i)
      seq.push_back({&u.user_id, std::vector<std::string>(u.train.begin(), u.train.begin() + static_cast<std::ptrdiff_t>(i)),
                     &u.train[i]});
    const auto* s = data.find_sequence(u.user_id);
    std::optional<std::size_t> last;
    for (std::size_t i = 0; i < u.train.size(); ++i)
      if (!encode_text(s->summaries[i], vocab).empty()) last = i;
    if (last)
      pref.push_back({&u.user_id,
                      std::vector<std::string>(u.train.begin(), u.train.begin() + static_cast<std::ptrdiff_t>(*last + 1)),
                      s->summaries[*last]});
    else
      ++stream.stats.skipped_preference;
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> upred;
  for (auto& [item, buyers] : item_purchasers(data)) {
    if (buyers.size() >= 2)
      upred.emplace_back(item, buyers);
    else
      ++stream.stats.skipped_user_pred;
  }
  stream.stats.seqrec_pairs = seq.size();
  stream.stats.user_pred_pool = upred.size();
  stream.stats.preference_pool = pref.size();
  if (seq.empty() && upred.empty() && pref.empty()) throw EmptyCorpusError("no training samples in the split");

  const std::size_t pools[3] = {seq.size(), upred.size(), pref.size()};
  const TaskFamily fams[3] = {TaskFamily::seqrec, TaskFamily::user_pred, TaskFamily::preference};
  double wsum = 0.0;
  for (auto f : fams) wsum += cfg.mix.weight(f);
  std::size_t want[3];
  for (int f = 0; f < 3; ++f) {
    const double w = cfg.mix.weight(fams[f]);
    if (w == 0.0 || pools[f] == 0) {
      want[f] = 0;
    } else if (cfg.total_samples > 0) {
      want[f] = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.total_samples) * w / wsum));
    } else if (cfg.mix.seqrec > 0.0) {
      want[f] = f == 0 ? seq.size()
                       : static_cast<std::size_t>(std::llround(static_cast<double>(seq.size()) * w / cfg.mix.seqrec));
    } else {
      want[f] = pools[f];
    }
  }

  std::vector<SampleSpec> specs;
  for (int f = 0; f < 3; ++f) {
    std::vector<std::size_t> order;
    while (order.size() < want[f]) {
      std::vector<std::size_t> pass(pools[f]);
      for (std::size_t i = 0; i < pass.size(); ++i) pass[i] = i;
      if (f != 0 || cfg.total_samples > 0) std::shuffle(pass.begin(), pass.end(), rng);
      order.insert(order.end(), pass.begin(), pass.end());
    }
    order.resize(want[f]);
    for (auto i : order) specs.push_back({fams[f], i});
    stream.stats.counts[f] = want[f];
  }
  std::shuffle(specs.begin(), specs.end(), rng);

  std::vector<std::vector<PromptTemplate>> by_family;
  for (auto f : fams) {
    by_family.push_back(templates_for(templates, f));
    if (by_family.back().empty() && want[static_cast<int>(f)] > 0)
      throw ConfigError(std::string("no templates for task family ") + family_name(f));
  }

  std::vector<PromptInstance> flat;
  flat.reserve(specs.size());
  for (const auto& s : specs) {
    const auto& pool = by_family[static_cast<std::size_t>(s.family)];
    const auto& tmpl = pool[static_cast<std::size_t>(rng() % pool.size())];
    switch (s.family) {
      case TaskFamily::seqrec: {
        const auto& p = seq[s.index];
        flat.push_back(render_seqrec(*p.user, p.history, p.target, items, users, vocab, tmpl, cfg.limits));
        break;
      }
      case TaskFamily::user_pred: {
        const auto& p = upred[s.index];
        flat.push_back(*render_user_prediction(p.first, p.second, items, users, vocab, tmpl, cfg.limits));
        break;
      }
      case TaskFamily::preference: {
        const auto& p = pref[s.index];
        flat.push_back(*render_preference(*p.user, p.history, p.summary, items, users, vocab, tmpl, cfg.limits));
        break;
      }
    }
  }
  for (std::size_t i = 0; i < flat.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
    const auto end = std::min(flat.size(), i + static_cast<std::size_t>(cfg.batch_size));
    stream.batches.emplace_back(std::make_move_iterator(flat.begin() + static_cast<std::ptrdiff_t>(i)),
                                std::make_move_iterator(flat.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  return stream;
}

void write_instances_jsonl(const std::vector<PromptInstance>& instances, const Vocabulary& vocab, std::ostream& out) {
  for (const auto& inst : instances) {
    nlohmann::json j;
    j["family"] = family_name(inst.family);
    j["template"] = inst.template_id;
    j["tokens"] = inst.tokens;
    j["loss_mask"] = inst.loss_mask;
    j["prompt_text"] = decode_tokens(inst.prompt(), vocab);
    j["target_text"] = decode_tokens(inst.target, vocab);
    out << j.dump() << '\n';
  }
}

}  // namespace ttds
