#pragma once

#include "ttds/common.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ttds {

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
  std::string review_text;
  std::string summary;
};

struct ItemMeta {
  std::string item_id;
  std::string title;
  std::string description;
  std::string brand;
  std::vector<std::string> categories;
};

struct InteractionSequence {
  std::string user_id;
  std::vector<std::string> items;
  std::vector<std::int64_t> timestamps;
  std::vector<std::string> summaries;  // parallel to items, may hold empty strings

  std::size_t size() const { return items.size(); }
};

struct ContentRecord {
  Tower kind = Tower::item;
  std::string entity_id;
  std::string text;
  std::map<std::string, std::string> source_fields;
};

// Leave-one-out split for one user: items[0..n-3] train, items[n-2] valid, items[n-1] test.
struct UserSplit {
  std::string user_id;
  std::vector<std::string> train;
  std::string valid;
  std::string test;
};

struct DatasetSplit {
  std::vector<UserSplit> users;  // sorted by user id
  std::vector<std::string> item_catalog;
  std::vector<std::string> user_catalog;
  std::size_t skipped_short = 0;
};

struct CorpusStats {
  std::size_t review_lines = 0;
  std::size_t meta_lines = 0;
  std::size_t malformed = 0;
  std::size_t exact_duplicates = 0;
  std::size_t raw_interactions = 0;
  std::size_t kept_interactions = 0;
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t kcore_rounds = 0;
  std::size_t skipped_short = 0;
  std::vector<std::string> malformed_samples;  // "reviews:17: <reason>" (first few only)
};

struct IngestOptions {
  int min_core = 5;
  bool iterative_kcore = true;
  bool abort_on_malformed = false;
  int recent_reviews = 5;   // R summaries folded into user content
  int top_categories = 3;   // most frequent categories folded into user content
};

struct Dataset {
  std::vector<InteractionSequence> sequences;  // sorted by user id
  std::vector<ContentRecord> items;            // sorted by item id
  std::vector<ContentRecord> users;            // sorted by user id
  DatasetSplit split;
  CorpusStats stats;
  std::map<std::string, int> item_cluster;     // planted labels (synthetic data only)

  const ContentRecord* find_item(const std::string& id) const;
  const ContentRecord* find_user(const std::string& id) const;
  const InteractionSequence* find_sequence(const std::string& user_id) const;
};

// Removes every interaction whose user or item has fewer than `min_core` interactions.
// When `iterative` is set, repeats until no removal happens.
std::vector<Interaction> kcore_filter(std::vector<Interaction> interactions, int min_core,
                                      bool iterative, std::size_t* rounds = nullptr);

// Drops exact (user, item, timestamp) duplicates, keeping the first occurrence.
std::vector<Interaction> dedupe_exact(std::vector<Interaction> interactions, std::size_t* removed = nullptr);

std::vector<InteractionSequence> build_sequences(const std::vector<Interaction>& interactions);

DatasetSplit build_splits(const std::vector<InteractionSequence>& sequences);

// Autoregressive (history, next item) pairs from a user's train portion.
std::vector<std::pair<std::vector<std::string>, std::string>> training_pairs(const UserSplit& user);

ContentRecord assemble_item_content(const ItemMeta& meta);

// `visible` holds the user's interactions that may feed content (chronological).
ContentRecord assemble_user_content(const std::string& user_id, const std::vector<Interaction>& visible,
                                    const std::map<std::string, ItemMeta>& item_meta, int recent_reviews,
                                    int top_categories);

Dataset build_dataset(std::vector<Interaction> interactions, const std::map<std::string, ItemMeta>& item_meta,
                      const IngestOptions& options);

// Parses Amazon-style JSON-lines review and metadata streams.
Dataset ingest_reviews(std::istream& reviews, std::istream& metadata, const IngestOptions& options);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ttds
