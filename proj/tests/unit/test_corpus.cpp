#include "doctest.h"
#include "helpers.hpp"

#include "ttds/corpus.hpp"
#include "ttds/synthetic.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <sstream>

using namespace ttds;

namespace {

// Fixed point of "drop every interaction touching a user or item with < k interactions",
// recomputed from scratch each round.
std::set<std::pair<std::string, std::string>> kcore_oracle(const std::vector<Interaction>& in, int k) {
  std::set<std::pair<std::string, std::string>> alive;
  for (const auto& x : in) alive.insert({x.user_id, x.item_id});
  for (;;) {
    std::map<std::string, int> u, i;
    for (const auto& [a, b] : alive) ++u[a], ++i[b];
    std::set<std::pair<std::string, std::string>> next;
    for (const auto& p : alive)
      if (u[p.first] >= k && i[p.second] >= k) next.insert(p);
    if (next == alive) return alive;
    alive = std::move(next);
  }
}

std::string review_line(const std::string& user, const std::string& item, long ts, const std::string& summary = "") {
  return R"({"reviewerID":")" + user + R"(","asin":")" + item + R"(","unixReviewTime":)" + std::to_string(ts) +
         R"(,"reviewText":"text","summary":")" + summary + "\"}";
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("k-core filter reaches the same fixed point as a from-scratch oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Interaction> in;
      std::uniform_int_distribution<int> user(0, 29), item(0, 19);
      std::set<std::pair<int, int>> seen;
      for (int n = 0; n < 250; ++n) {
        const int u = user(rng), i = item(rng);
        if (!seen.insert({u, i}).second) continue;
        in.push_back({"u" + test::pad3(u), "i" + test::pad3(i), n, "", ""});
      }
      const int k = 3 + trial % 3;
      const auto kept = kcore_filter(in, k, true);
      std::set<std::pair<std::string, std::string>> got;
      for (const auto& x : kept) got.insert({x.user_id, x.item_id});
      CHECK(got == kcore_oracle(in, k));
      // k-core property: every survivor has >= k partners
      std::map<std::string, int> uc, ic;
      for (const auto& x : kept) ++uc[x.user_id], ++ic[x.item_id];
      for (const auto& [_, c] : uc) CHECK(c >= k);
      for (const auto& [_, c] : ic) CHECK(c >= k);
    }
  }

  TEST_CASE("single-pass k-core stops after one round") {
    // dropping u0 (2 items) leaves x with 2 buyers, which only a second round removes
    std::vector<Interaction> in;
    for (int u = 1; u <= 3; ++u)
      for (int i = 0; i < 3; ++i) in.push_back({"u" + std::to_string(u), "i" + std::to_string(i), 0, "", ""});
    in.push_back({"u1", "x", 0, "", ""});
    in.push_back({"u2", "x", 0, "", ""});
    in.push_back({"u0", "x", 0, "", ""});
    in.push_back({"u0", "i0", 0, "", ""});
    std::size_t rounds = 0;
    const auto once = kcore_filter(in, 3, false, &rounds);
    CHECK(rounds == 1);
    CHECK(once.size() == 11);
    const auto full = kcore_filter(in, 3, true, &rounds);
    CHECK(rounds == 2);
    CHECK(full.size() == 9);
    CHECK_THROWS_AS(kcore_filter(in, 0, true), ConfigError);
  }

  TEST_CASE("exact duplicates are dropped, later re-purchases kept") {
    std::vector<Interaction> in{{"u", "a", 1, "", ""}, {"u", "a", 1, "", ""}, {"u", "a", 2, "", ""}};
    std::size_t removed = 0;
    const auto out = dedupe_exact(in, &removed);
    CHECK(removed == 1);
    CHECK(out.size() == 2);
  }

  TEST_CASE("leave-one-out split and training pairs") {
    std::vector<Interaction> in{{"u1", "c", 30, "", ""}, {"u1", "a", 10, "", ""}, {"u1", "b", 20, "", ""},
                                {"u1", "d", 40, "", ""}, {"u2", "a", 5, "", ""},  {"u2", "b", 6, "", ""}};
    const auto seqs = build_sequences(in);
    REQUIRE(seqs.size() == 2);
    CHECK(seqs[0].items == std::vector<std::string>{"a", "b", "c", "d"});
    const auto split = build_splits(seqs);
    CHECK(split.skipped_short == 1);
    REQUIRE(split.users.size() == 1);
    const auto& u = split.users[0];
    CHECK(u.train == std::vector<std::string>{"a", "b"});
    CHECK(u.valid == "c");
    CHECK(u.test == "d");
    const auto pairs = training_pairs(u);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].first == std::vector<std::string>{"a"});
    CHECK(pairs[0].second == "b");
    CHECK(split.item_catalog == std::vector<std::string>{"a", "b", "c", "d"});
  }

  TEST_CASE("ingest tolerates malformed lines and counts them") {
    std::ostringstream reviews;
    for (int u = 0; u < 6; ++u)
      for (int i = 0; i < 6; ++i) reviews << review_line("U" + std::to_string(u), "I" + std::to_string(i), u * 10 + i, "s") << '\n';
    reviews << "{not json\n";
    reviews << R"({"asin":"I1","unixReviewTime":3})" << '\n';  // no reviewer
    std::istringstream r(reviews.str());
    std::istringstream m(R"({"asin":"I0","title":"Red Pen","categories":[["Office","Pens"]]})"
                         "\n");
    IngestOptions opt;
    const Dataset d = ingest_reviews(r, m, opt);
    CHECK(d.stats.malformed == 2);
    CHECK(d.stats.review_lines == 38);
    CHECK(d.items.size() == 6);
    CHECK(d.users.size() == 6);
    const auto* i0 = d.find_item("I0");
    REQUIRE(i0);
    CHECK(i0->text.find("Red Pen") != std::string::npos);

    std::istringstream r2(reviews.str()), m2("");
    opt.abort_on_malformed = true;
    CHECK_THROWS_AS(ingest_reviews(r2, m2, opt), DataError);
  }

  TEST_CASE("empty input gives an empty dataset, over-filtered input throws") {
    std::istringstream empty_r(""), empty_m("");
    const Dataset d = ingest_reviews(empty_r, empty_m, {});
    CHECK(d.sequences.empty());
    CHECK(d.items.empty());

    std::istringstream r(review_line("u", "i", 1) + "\n"), m("");
    CHECK_THROWS_AS(ingest_reviews(r, m, {}), EmptyCorpusError);
  }

  TEST_CASE("user content never sees validation or test items") {
    std::vector<Interaction> in = test::dense_interactions(8, 8, 8);
    for (auto& x : in) x.summary = "bought " + x.item_id;
    IngestOptions opt;
    opt.recent_reviews = 100;
    const Dataset d = build_dataset(in, {}, opt);
    for (const auto& u : d.split.users) {
      const auto* rec = d.find_user(u.user_id);
      REQUIRE(rec);
      const auto* seq = d.find_sequence(u.user_id);
      const auto n = seq->size();
      // the last two purchases are held out; their summaries must not be in the content
      CHECK(rec->text.find("bought " + seq->items[n - 1]) == std::string::npos);
      CHECK(rec->text.find("bought " + seq->items[n - 2]) == std::string::npos);
    }
  }

  TEST_CASE("dataset save/load round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "ttds_corpus_rt";
    std::filesystem::remove_all(dir);
    SynthConfig sc;
    sc.items = 60;
    sc.users = 40;
    sc.clusters = 4;
    const Dataset d = synthetic_dataset(sc, {});
    save_dataset(d, dir);
    const Dataset e = load_dataset(dir);
    REQUIRE(e.sequences.size() == d.sequences.size());
    for (std::size_t i = 0; i < d.sequences.size(); ++i) {
      CHECK(e.sequences[i].items == d.sequences[i].items);
      CHECK(e.sequences[i].timestamps == d.sequences[i].timestamps);
    }
    REQUIRE(e.items.size() == d.items.size());
    for (std::size_t i = 0; i < d.items.size(); ++i) CHECK(e.items[i].text == d.items[i].text);
    CHECK(e.split.users.size() == d.split.users.size());
    CHECK(e.item_cluster == d.item_cluster);
    CHECK(e.stats.kept_interactions == d.stats.kept_interactions);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("synthetic generator is seed-deterministic and plants clusters") {
    SynthConfig sc;
    const auto a = generate_synthetic(sc);
    const auto b = generate_synthetic(sc);
    REQUIRE(a.interactions.size() == b.interactions.size());
    for (std::size_t i = 0; i < a.interactions.size(); ++i) {
      CHECK(a.interactions[i].user_id == b.interactions[i].user_id);
      CHECK(a.interactions[i].item_id == b.interactions[i].item_id);
    }
    std::set<int> clusters;
    for (const auto& [_, c] : a.item_cluster) clusters.insert(c);
    CHECK(clusters.size() == static_cast<std::size_t>(sc.clusters));
    CHECK(a.item_meta.size() == static_cast<std::size_t>(sc.items));
  }
}
