#include "ttds/eval.hpp"

#include "ttds/omp.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace ttds {

namespace {

int rank_of(const std::vector<std::string>& ranked, const std::string& target, int k) {
  const std::size_t n = std::min(ranked.size(), static_cast<std::size_t>(std::max(k, 0)));
  for (std::size_t i = 0; i < n; ++i)
    if (ranked[i] == target) return static_cast<int>(i) + 1;
  return 0;
}

std::vector<std::string> history_before(const UserSplit& u, EvalTarget target) {
  std::vector<std::string> h = u.train;
  if (target == EvalTarget::test) h.push_back(u.valid);
  return h;
}

}  // namespace

int hr_at_k(const std::vector<std::string>& ranked, const std::string& target, int k) {
  return rank_of(ranked, target, k) > 0 ? 1 : 0;
}

double ndcg_at_k(const std::vector<std::string>& ranked, const std::string& target, int k) {
  const int r = rank_of(ranked, target, k);
  return r > 0 ? 1.0 / std::log2(static_cast<double>(r) + 1.0) : 0.0;
}

double collision_rate(const IndexAssignment& a) {
  if (a.ids.empty()) return 0.0;
  std::map<std::vector<int>, std::size_t> counts;
  for (const auto& id : a.ids) ++counts[id.levels];
  std::size_t shared = 0;
  for (const auto& [tuple, n] : counts)
    if (n > 1) shared += n;
  return static_cast<double>(shared) / static_cast<double>(a.ids.size());
}

std::vector<std::string> metric_names(const std::vector<int>& ks) {
  std::vector<std::string> out;
  for (int k : ks) out.push_back("HR@" + std::to_string(k));
  for (int k : ks)
    if (k > 1) out.push_back("NDCG@" + std::to_string(k));
  return out;
}

void accumulate_metrics(const std::vector<std::string>& ranked, const std::string& target, const std::vector<int>& ks,
                        MetricMap& sums) {
  for (int k : ks) {
    sums["HR@" + std::to_string(k)] += hr_at_k(ranked, target, k);
    if (k > 1) sums["NDCG@" + std::to_string(k)] += ndcg_at_k(ranked, target, k);
  }
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["users"] = users;
  j["decoding"] = decoding;
  j["collision_rate"] = {{"item", collision_rate_item}, {"user", collision_rate_user}};
  j["in_domain_rate"] = in_domain_rate;
  j["config_hash"] = config_hash;
  j["averaged"] = averaged;
  j["per_template"] = nlohmann::json::array();
  for (const auto& t : per_template) j["per_template"].push_back({{"template", t.template_id}, {"metrics", t.metrics}});
  return j;
}

std::string MetricReport::table() const {
  std::ostringstream os;
  std::vector<std::string> names;
  for (const auto& [n, v] : averaged) names.push_back(n);
  os << std::left << std::setw(12) << "template";
  for (const auto& n : names) os << std::right << std::setw(10) << n;
  os << '\n';
  auto row = [&](const std::string& label, const MetricMap& m) {
    os << std::left << std::setw(12) << label;
    for (const auto& n : names) os << std::right << std::setw(10) << std::fixed << std::setprecision(4) << m.at(n);
    os << '\n';
  };
  for (const auto& t : per_template) row(t.template_id, t.metrics);
  row("average", averaged);
  os << "users " << users << ", decoding " << decoding << ", collision rate item " << std::setprecision(4)
     << collision_rate_item << " user " << collision_rate_user << ", in-domain " << in_domain_rate << '\n';
  return os.str();
}

MetricReport evaluate(const Dataset& data, const ModelBundle& model, const IndexTrie& trie,
                      const std::vector<PromptTemplate>& templates, const EvalOptions& options) {
  if (data.split.users.empty()) throw EmptyCorpusError("evaluation on an empty split");
  if (options.ks.empty()) throw ConfigError("evaluation needs at least one K");
  const auto seqrec = templates_for(templates, TaskFamily::seqrec);
  if (seqrec.empty()) throw ConfigError("evaluation needs at least one seqrec template");
  const int kmax = *std::max_element(options.ks.begin(), options.ks.end());
  RecommendOptions rec = options.recommend;
  rec.k = kmax;

  std::size_t n_users = data.split.users.size();
  if (options.max_users > 0) n_users = std::min(n_users, options.max_users);

  MetricReport report;
  report.users = n_users;
  report.decoding = decode_mode_name(rec.mode);
  report.collision_rate_item = collision_rate(model.item_ids);
  report.collision_rate_user = collision_rate(model.user_ids);
  std::size_t emitted = 0, in_domain = 0;
  std::set<std::string> catalog(model.item_ids.entities.begin(), model.item_ids.entities.end());

  for (const auto& tmpl : seqrec) {
    std::vector<std::vector<ScoredItem>> results(n_users);
    const auto n = static_cast<std::ptrdiff_t>(n_users);
    TTDS_OMP(parallel for schedule(dynamic, 4) num_threads(worker_threads()))
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto& u = data.split.users[static_cast<std::size_t>(i)];
      results[static_cast<std::size_t>(i)] =
          recommend_topk(model, trie, u.user_id, history_before(u, options.target), tmpl, rec);
    }
    MetricMap sums;
    for (const auto& name : metric_names(options.ks)) sums[name] = 0.0;
    for (std::size_t i = 0; i < n_users; ++i) {
      const auto& u = data.split.users[i];
      std::vector<std::string> ranked;
      for (const auto& r : results[i]) {
        ranked.push_back(r.item_id);
        ++emitted;
        if (catalog.count(r.item_id)) ++in_domain;
      }
      accumulate_metrics(ranked, options.target == EvalTarget::test ? u.test : u.valid, options.ks, sums);
    }
    for (auto& [name, v] : sums) v /= static_cast<double>(n_users);
    report.per_template.push_back({tmpl.id, sums});
  }
  for (const auto& name : metric_names(options.ks)) {
    double s = 0.0;
    for (const auto& t : report.per_template) s += t.metrics.at(name);
    report.averaged[name] = s / static_cast<double>(report.per_template.size());
  }
  report.in_domain_rate = emitted ? static_cast<double>(in_domain) / static_cast<double>(emitted) : 1.0;
  return report;
}

MetricMap evaluate_popularity(const Dataset& data, const std::vector<int>& ks, EvalTarget target,
                              bool filter_history) {
  if (data.split.users.empty()) throw EmptyCorpusError("evaluation on an empty split");
  std::map<std::string, std::size_t> counts;
  for (const auto& item : data.split.item_catalog) counts[item] = 0;
  for (const auto& u : data.split.users)
    for (const auto& item : u.train) ++counts[item];
  std::vector<std::pair<std::string, std::size_t>> order(counts.begin(), counts.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const int kmax = *std::max_element(ks.begin(), ks.end());

  MetricMap sums;
  for (const auto& name : metric_names(ks)) sums[name] = 0.0;
  for (const auto& u : data.split.users) {
    const auto hist = history_before(u, target);
    const std::set<std::string> seen(hist.begin(), hist.end());
    std::vector<std::string> ranked;
    for (const auto& [item, c] : order) {
      if (static_cast<int>(ranked.size()) == kmax) break;
      if (filter_history && seen.count(item)) continue;
      ranked.push_back(item);
    }
    accumulate_metrics(ranked, target == EvalTarget::test ? u.test : u.valid, ks, sums);
  }
  for (auto& [name, v] : sums) v /= static_cast<double>(data.split.users.size());
  return sums;
}

}  // namespace ttds
