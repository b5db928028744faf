#include "doctest.h"
#include "helpers.hpp"

#include "ttds/eval.hpp"
#include "ttds/inference.hpp"
#include "ttds/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace ttds;

namespace {

struct Catalog {
  Vocabulary vocab;
  Backbone<float> model;
  IndexAssignment items;
};

Catalog make_catalog(int n_items, std::uint64_t seed) {
  Catalog c;
  c.vocab = test::word_vocab(10);
  c.vocab.extend(2, 3, 1, 2, 8);
  BackboneConfig bc;
  bc.d_model = 16;
  bc.layers = 1;
  bc.heads = 2;
  bc.max_len = 32;
  c.model = Backbone<float>(bc, c.vocab.size(), seed);
  // spread the logits so scores differ meaningfully
  c.model.params().head_w *= 20.0f;
  std::vector<std::string> ents;
  std::vector<std::vector<int>> levels;
  for (int i = 0; i < n_items; ++i) {
    ents.push_back("i" + test::pad3(i));
    levels.push_back({i % 3, (i / 3) % 3});
  }
  c.items = test::explicit_assignment(Tower::item, ents, levels);
  return c;
}

// Score of one full path recomputed from a fresh forward pass over prompt + path.
double path_score_oracle(const Backbone<float>& model, const std::vector<TokenId>& prompt, const std::vector<TokenId>& path) {
  std::vector<TokenId> seq = prompt;
  seq.insert(seq.end(), path.begin(), path.end());
  const Mat<float> logits = forward_logits(model, seq);
  double s = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t) {
    const Eigen::RowVectorXd row = logits.row(static_cast<Eigen::Index>(prompt.size() - 1 + t)).cast<double>();
    const double mx = row.maxCoeff();
    s += row(path[t]) - mx - std::log((row.array() - mx).exp().sum());
  }
  return s;
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("trie holds every catalog path and nothing else") {
    const auto c = make_catalog(20, 1);
    const auto trie = build_trie(c.items, c.vocab);
    CHECK(trie.depth() == 3);
    CHECK(trie.leaf_count() == 20);
    CHECK(trie.node(0).leaves == 20);
    for (std::size_t i = 0; i < c.items.entities.size(); ++i) {
      const auto path = id_tokens(c.items.ids[i], c.vocab);
      CHECK(trie.lookup(path) == std::optional<std::string>(c.items.entities[i]));
      CHECK(trie.path_nodes(c.items.entities[i]).size() == 4);
    }
    auto bogus = id_tokens(c.items.ids[0], c.vocab);
    bogus.back() = c.vocab.suffix_token(7);
    CHECK_FALSE(trie.contains(bogus));
    CHECK_FALSE(trie.contains(std::vector<TokenId>{c.vocab.semantic_token(Tower::item, 0, 0)}));

    auto dup = c.items;
    dup.ids[1] = dup.ids[0];
    CHECK_THROWS_AS(build_trie(dup, c.vocab), DataError);
    auto users = c.items;
    users.tower = Tower::user;
    CHECK_THROWS_AS(build_trie(users, c.vocab), DataError);
  }

  TEST_CASE("exhaustive scores equal a fresh forward pass per path") {
    const auto c = make_catalog(18, 2);
    const auto trie = build_trie(c.items, c.vocab);
    const std::vector<TokenId> prompt{Vocabulary::kBos, 4, 5, 6};
    const auto all = exhaustive_ranking(c.model, prompt, trie, 18);
    REQUIRE(all.size() == 18);
    for (const auto& s : all)
      CHECK(s.score == doctest::Approx(path_score_oracle(c.model, prompt, id_tokens(c.items.id_of(s.item_id), c.vocab)))
                           .epsilon(1e-5));
    for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].score >= all[i].score);
  }

  TEST_CASE("a beam as wide as the catalog reproduces the exhaustive ranking exactly") {
    for (std::uint64_t seed = 3; seed < 8; ++seed) {
      const auto c = make_catalog(24, seed);
      const auto trie = build_trie(c.items, c.vocab);
      const std::vector<TokenId> prompt{Vocabulary::kBos, static_cast<TokenId>(3 + seed)};
      CHECK(constrained_beam_search(c.model, prompt, trie, 24, 24) == exhaustive_ranking(c.model, prompt, trie, 24));
      Exclusion ex{{"i001", "i005", "i017"}};
      CHECK(constrained_beam_search(c.model, prompt, trie, 24, 10, &ex) == exhaustive_ranking(c.model, prompt, trie, 10, &ex));
    }
  }

  TEST_CASE("beam output is distinct catalog items, excluded ones never appear") {
    const auto c = make_catalog(24, 9);
    const auto trie = build_trie(c.items, c.vocab);
    const std::vector<TokenId> prompt{Vocabulary::kBos, 7};
    Exclusion ex;
    for (int i = 0; i < 20; ++i) ex.items.insert("i" + test::pad3(i));
    const auto top = constrained_beam_search(c.model, prompt, trie, 6, 6, &ex);
    CHECK(top.size() == 4);
    std::set<std::string> seen;
    for (const auto& s : top) {
      CHECK_FALSE(ex.items.count(s.item_id));
      CHECK(c.items.index_of(s.item_id).has_value());
      CHECK(seen.insert(s.item_id).second);
    }
    const auto five = constrained_beam_search(c.model, prompt, trie, 5, 5);
    CHECK(five.size() == 5);
  }

  TEST_CASE("configuration errors") {
    const auto c = make_catalog(12, 10);
    const auto trie = build_trie(c.items, c.vocab);
    const std::vector<TokenId> prompt{Vocabulary::kBos};
    CHECK_THROWS_AS(constrained_beam_search(c.model, prompt, trie, 4, 5), ConfigError);
    CHECK_THROWS_AS(constrained_beam_search(c.model, prompt, trie, 4, 0), ConfigError);
    CHECK_THROWS_AS(exhaustive_ranking(c.model, std::vector<TokenId>{}, trie, 3), DataError);
    CHECK_THROWS_AS(parse_decode_mode("greedy"), ConfigError);
    CHECK(RecommendOptions{}.effective_width() == 20);
    RecommendOptions o;
    o.k = 15;
    CHECK(o.effective_width() == 30);
  }

  TEST_CASE("long prompts are left-truncated to leave room for the ID") {
    const auto c = make_catalog(12, 11);
    const auto trie = build_trie(c.items, c.vocab);
    std::vector<TokenId> long_prompt(40, 5);
    long_prompt[0] = Vocabulary::kBos;
    const std::vector<TokenId> tail(long_prompt.end() - 29, long_prompt.end());
    CHECK(exhaustive_ranking(c.model, long_prompt, trie, 5) == exhaustive_ranking(c.model, tail, trie, 5));
  }
}

TEST_SUITE("eval") {
  TEST_CASE("HR and NDCG against a brute-force formula") {
    std::mt19937_64 rng(17);
    for (int n = 0; n < 100; ++n) {
      std::vector<std::string> ranked;
      for (int i = 0; i < 12; ++i) ranked.push_back("x" + std::to_string(i));
      std::shuffle(ranked.begin(), ranked.end(), rng);
      const std::string target = "x" + std::to_string(rng() % 16);  // sometimes absent
      const int k = 1 + static_cast<int>(rng() % 12);
      int pos = -1;
      for (int i = 0; i < 12; ++i)
        if (ranked[static_cast<std::size_t>(i)] == target) pos = i;
      const bool hit = pos >= 0 && pos < k;
      CHECK(hr_at_k(ranked, target, k) == (hit ? 1 : 0));
      CHECK(ndcg_at_k(ranked, target, k) == doctest::Approx(hit ? std::log(2.0) / std::log(pos + 2.0) : 0.0));
    }
    CHECK(ndcg_at_k({"a", "b", "c"}, "c", 10) == 0.5);
    CHECK(ndcg_at_k({"a"}, "a", 1) == 1.0);
    CHECK(hr_at_k({}, "a", 10) == 0);
  }

  TEST_CASE("metric names and accumulation") {
    CHECK(metric_names({1, 5, 10}) == std::vector<std::string>{"HR@1", "HR@5", "HR@10", "NDCG@5", "NDCG@10"});
    MetricMap sums;
    accumulate_metrics({"a", "b", "c"}, "b", {1, 5}, sums);
    accumulate_metrics({"a", "b", "c"}, "a", {1, 5}, sums);
    CHECK(sums["HR@1"] == 1.0);
    CHECK(sums["HR@5"] == 2.0);
    CHECK(sums["NDCG@5"] == doctest::Approx(1.0 + 1.0 / std::log2(3.0)));
  }

  TEST_CASE("collision rate counts entities sharing a level tuple") {
    CHECK(collision_rate(test::explicit_assignment(Tower::item, {"a", "b", "c"}, {{1, 2}, {1, 2}, {0, 3}})) ==
          doctest::Approx(2.0 / 3.0));
    CHECK(collision_rate(test::explicit_assignment(Tower::item, {"a", "b"}, {{1, 2}, {1, 3}})) == 0.0);
    CHECK(collision_rate(IndexAssignment{}) == 0.0);
  }

  TEST_CASE("popularity baseline matches a counting oracle") {
    SynthConfig sc;
    sc.items = 80;
    sc.users = 60;
    sc.clusters = 5;
    const Dataset d = synthetic_dataset(sc, {});
    for (auto target : {EvalTarget::valid, EvalTarget::test}) {
      std::map<std::string, int> count;
      for (const auto& u : d.split.users)
        for (const auto& i : u.train) ++count[i];
      std::vector<std::pair<int, std::string>> order;
      for (const auto& i : d.split.item_catalog) order.push_back({-count[i], i});
      std::sort(order.begin(), order.end());
      double hr = 0, ndcg = 0;
      for (const auto& u : d.split.users) {
        std::set<std::string> seen(u.train.begin(), u.train.end());
        if (target == EvalTarget::test) seen.insert(u.valid);
        const std::string& goal = target == EvalTarget::test ? u.test : u.valid;
        int rank = 0;
        for (const auto& [_, item] : order) {
          if (seen.count(item)) continue;
          if (++rank > 10) break;
          if (item == goal) {
            hr += 1;
            ndcg += 1.0 / std::log2(rank + 1.0);
            break;
          }
        }
      }
      const auto n = static_cast<double>(d.split.users.size());
      const auto m = evaluate_popularity(d, {1, 5, 10}, target, true);
      CHECK(m.at("HR@10") == doctest::Approx(hr / n).epsilon(1e-12));
      CHECK(m.at("NDCG@10") == doctest::Approx(ndcg / n).epsilon(1e-12));
    }
  }

  TEST_CASE("report serialisation") {
    MetricReport r;
    r.per_template.push_back({"seq-1", {{"HR@10", 0.25}}});
    r.averaged = {{"HR@10", 0.25}};
    r.users = 4;
    r.decoding = "beam";
    const auto j = r.to_json();
    CHECK(j.contains("averaged"));
    CHECK(r.table().find("HR@10") != std::string::npos);
  }
}
