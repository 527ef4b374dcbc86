#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ddsi {

using TokenId = std::int32_t;
using DocId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Lowercased alphanumeric runs of `text`, in order.
std::vector<std::string> split_words(std::string_view text);

/// Bijection between words and [0, size()). Index 0 is the unknown token.
class Vocab {
 public:
  static constexpr TokenId kUnknown = 0;
  static constexpr std::string_view kUnknownWord = "<unk>";

  Vocab();

  /// Returns the existing index of `word` or appends it.
  TokenId add(std::string_view word);
  TokenId lookup(std::string_view word) const;
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }

  TokenSeq tokenize(std::string_view text) const;

  bool operator==(const Vocab& other) const { return words_ == other.words_; }

 private:
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::string> words_;
};

struct Document {
  DocId docid = 0;
  std::string title;
  std::string text;
  TokenSeq tokens;

  bool operator==(const Document&) const = default;
};

struct QueryExample {
  std::int32_t qid = 0;
  std::string text;
  TokenSeq tokens;
  DocId gold_docid = 0;

  bool operator==(const QueryExample&) const = default;
};

/// Documents indexed by docid (docs[i].docid == i) plus the vocabulary built
/// from their texts in docid order.
struct Corpus {
  std::vector<Document> docs;
  Vocab vocab;

  std::size_t size() const { return docs.size(); }
  const Document& doc(DocId id) const { return docs.at(static_cast<std::size_t>(id)); }

  bool operator==(const Corpus&) const = default;
};

/// Builds a Corpus from (docid, title, text) triples in any order. Validates
/// density and non-emptiness, then tokenizes.
Corpus make_corpus(std::vector<Document> docs);

Corpus parse_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(const Corpus& corpus, std::ostream& out);

/// Parses `query<TAB>gold_docid` lines; qids follow line order.
std::vector<QueryExample> parse_queries(std::istream& in, const Corpus& corpus);
std::vector<QueryExample> load_queries(const std::filesystem::path& path, const Corpus& corpus);
void write_queries(const std::vector<QueryExample>& queries, std::ostream& out);

struct SyntheticConfig {
  std::int64_t num_topics = 20;
  std::int64_t docs_per_topic = 10;
  std::int64_t vocab_per_topic = 100;
  std::int64_t shared_vocab = 0;
  std::int64_t doc_len = 20;
  std::int64_t queries_per_doc = 5;
  std::int64_t query_len = 20;
  double near_duplicate_fraction = 0.5;
  std::uint64_t seed = 7;

  /// Throws Error{InvalidConfig}.
  void validate() const;
};

struct SyntheticData {
  Corpus corpus;
  std::vector<QueryExample> train;
  std::vector<QueryExample> test;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg);

}  // namespace ddsi
