#include "ddsi/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ddsi/error.hpp"
#include "ddsi/rng.hpp"

namespace ddsi {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocab::Vocab() { add(kUnknownWord); }

TokenId Vocab::add(std::string_view word) {
  auto it = index_.find(std::string(word));
  if (it != index_.end()) return it->second;
  auto id = static_cast<TokenId>(words_.size());
  words_.emplace_back(word);
  index_.emplace(words_.back(), id);
  return id;
}

TokenId Vocab::lookup(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnknown : it->second;
}

TokenSeq Vocab::tokenize(std::string_view text) const {
  TokenSeq out;
  for (const auto& w : split_words(text)) out.push_back(lookup(w));
  return out;
}

Corpus make_corpus(std::vector<Document> docs) {
  const auto n = docs.size();
  std::vector<Document> slots(n);
  std::vector<bool> seen(n, false);
  for (auto& d : docs) {
    if (d.docid < 0 || static_cast<std::size_t>(d.docid) >= n ||
        seen[static_cast<std::size_t>(d.docid)]) {
      // Either a duplicate or an id past the end: some id in [0, n) is missing.
      continue;
    }
    seen[static_cast<std::size_t>(d.docid)] = true;
    slots[static_cast<std::size_t>(d.docid)] = std::move(d);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) {
      throw Error(Errc::NonDenseDocids, "missing docid " + std::to_string(i),
                  static_cast<std::int64_t>(i));
    }
  }

  Corpus corpus;
  for (const auto& d : slots) {
    for (const auto& w : split_words(d.text)) corpus.vocab.add(w);
  }
  for (auto& d : slots) {
    d.tokens = corpus.vocab.tokenize(d.text);
    if (d.tokens.empty()) {
      throw Error(Errc::EmptyDocument, "docid " + std::to_string(d.docid), d.docid);
    }
  }
  corpus.docs = std::move(slots);
  return corpus;
}

Corpus parse_corpus(std::istream& in) {
  std::vector<Document> docs;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    Document d;
    try {
      auto j = nlohmann::json::parse(line);
      auto id = j.at("docid").get<std::int64_t>();
      if (id < 0 || id > INT32_MAX) throw std::out_of_range("docid");
      d.docid = static_cast<DocId>(id);
      d.title = j.at("title").get<std::string>();
      d.text = j.at("text").get<std::string>();
    } catch (const std::exception& e) {
      throw Error(Errc::MalformedLine, "line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
    docs.push_back(std::move(d));
  }
  return make_corpus(std::move(docs));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return parse_corpus(in);
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& d : corpus.docs) {
    nlohmann::ordered_json j;
    j["docid"] = d.docid;
    j["title"] = d.title;
    j["text"] = d.text;
    out << j.dump() << '\n';
  }
}

std::vector<QueryExample> parse_queries(std::istream& in, const Corpus& corpus) {
  std::vector<QueryExample> out;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw Error(Errc::MalformedLine, "line " + std::to_string(lineno) + ": no tab", lineno);
    }
    std::string id_field = line.substr(tab + 1);
    std::int64_t gold = 0;
    std::size_t used = 0;
    try {
      gold = std::stoll(id_field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != id_field.size()) {
      throw Error(Errc::MalformedLine, "line " + std::to_string(lineno) + ": bad docid", lineno);
    }
    if (gold < 0 || static_cast<std::size_t>(gold) >= corpus.size()) {
      throw Error(Errc::GoldDocidOutOfRange,
                  "line " + std::to_string(lineno) + ": docid " + std::to_string(gold), gold);
    }
    QueryExample q;
    q.qid = static_cast<std::int32_t>(out.size());
    q.text = line.substr(0, tab);
    q.tokens = corpus.vocab.tokenize(q.text);
    q.gold_docid = static_cast<DocId>(gold);
    if (q.tokens.empty()) {
      throw Error(Errc::MalformedLine, "line " + std::to_string(lineno) + ": empty query", lineno);
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<QueryExample> load_queries(const std::filesystem::path& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return parse_queries(in, corpus);
}

void write_queries(const std::vector<QueryExample>& queries, std::ostream& out) {
  for (const auto& q : queries) out << q.text << '\t' << q.gold_docid << '\n';
}

void SyntheticConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(Errc::InvalidConfig, what);
  };
  require(num_topics >= 1, "num_topics must be >= 1");
  require(docs_per_topic >= 1, "docs_per_topic must be >= 1");
  require(vocab_per_topic >= 1, "vocab_per_topic must be >= 1");
  require(shared_vocab >= 0, "shared_vocab must be >= 0");
  require(doc_len >= 1, "doc_len must be >= 1");
  require(queries_per_doc >= 1, "queries_per_doc must be >= 1");
  require(query_len >= 1, "query_len must be >= 1");
  require(near_duplicate_fraction >= 0.0 && near_duplicate_fraction <= 1.0,
          "near_duplicate_fraction must be in [0, 1]");
  require(num_topics * docs_per_topic <= INT32_MAX, "too many documents");
}

namespace {

// Share of a document's tokens drawn from the shared vocabulary.
constexpr double kSharedMass = 0.25;
// Positions of a topic prototype that near-duplicates re-sample.
constexpr double kPerturbFraction = 0.10;
// Redraw budget for a slot word that repeats an earlier choice.
constexpr int kMaxRedraws = 64;

std::string topic_word(std::int64_t topic, std::int64_t w) {
  return "t" + std::to_string(topic) + "w" + std::to_string(w);
}

std::string shared_word(std::int64_t w) { return "s" + std::to_string(w); }

std::string sample_word(Rng& rng, const SyntheticConfig& cfg, std::int64_t topic) {
  if (cfg.shared_vocab > 0 && rng.uniform() < kSharedMass) {
    return shared_word(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cfg.shared_vocab))));
  }
  return topic_word(topic,
                    static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cfg.vocab_per_topic))));
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s.push_back(' ');
    s += words[i];
  }
  return s;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const auto n_dup = static_cast<std::int64_t>(
      std::floor(cfg.near_duplicate_fraction * static_cast<double>(cfg.docs_per_topic) + 0.5));
  const auto n_slots = static_cast<std::int64_t>(
      std::floor(kPerturbFraction * static_cast<double>(cfg.doc_len)));

  std::vector<std::vector<std::string>> doc_words;
  std::vector<Document> docs;
  for (std::int64_t t = 0; t < cfg.num_topics; ++t) {
    std::vector<std::string> proto(static_cast<std::size_t>(cfg.doc_len));
    for (auto& w : proto) w = sample_word(rng, cfg, t);

    // Every near-duplicate re-samples the same slot positions, so any two of
    // them share at least doc_len - n_slots tokens in order.
    std::vector<std::int64_t> positions(static_cast<std::size_t>(cfg.doc_len));
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int64_t>(i);
    rng.shuffle(std::span(positions));
    positions.resize(static_cast<std::size_t>(n_slots));
    std::sort(positions.begin(), positions.end());

    std::vector<std::int64_t> local(static_cast<std::size_t>(cfg.docs_per_topic));
    for (std::size_t i = 0; i < local.size(); ++i) local[i] = static_cast<std::int64_t>(i);
    rng.shuffle(std::span(local));
    std::vector<bool> is_dup(local.size(), false);
    for (std::int64_t i = 0; i < n_dup; ++i) is_dup[static_cast<std::size_t>(local[static_cast<std::size_t>(i)])] = true;

    // Words already placed at each slot, so duplicates differ from the
    // prototype and from each other there when the vocabulary allows it.
    std::vector<std::vector<std::string>> used(positions.size());
    for (std::size_t k = 0; k < positions.size(); ++k) used[k].push_back(proto[static_cast<std::size_t>(positions[k])]);

    for (std::int64_t j = 0; j < cfg.docs_per_topic; ++j) {
      std::vector<std::string> words;
      if (is_dup[static_cast<std::size_t>(j)]) {
        words = proto;
        for (std::size_t k = 0; k < positions.size(); ++k) {
          std::string w = sample_word(rng, cfg, t);
          for (int attempt = 0; attempt < kMaxRedraws && std::ranges::find(used[k], w) != used[k].end(); ++attempt) {
            w = sample_word(rng, cfg, t);
          }
          used[k].push_back(w);
          words[static_cast<std::size_t>(positions[k])] = std::move(w);
        }
      } else {
        words.resize(static_cast<std::size_t>(cfg.doc_len));
        for (auto& w : words) w = sample_word(rng, cfg, t);
      }
      Document d;
      d.docid = static_cast<DocId>(t * cfg.docs_per_topic + j);
      d.title = "topic " + std::to_string(t) + " document " + std::to_string(j);
      d.text = join(words);
      docs.push_back(std::move(d));
      doc_words.push_back(std::move(words));
    }
  }

  SyntheticData data;
  data.corpus = make_corpus(std::move(docs));

  std::int64_t qid = 0;
  for (std::size_t d = 0; d < doc_words.size(); ++d) {
    const auto& words = doc_words[d];
    for (std::int64_t i = 0; i < cfg.queries_per_doc; ++i, ++qid) {
      // Positions are drawn without replacement, reshuffling once a document is exhausted.
      std::vector<std::string> q;
      std::vector<std::size_t> order(words.size());
      while (q.size() < static_cast<std::size_t>(cfg.query_len)) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t j = 0; j < order.size() && q.size() < static_cast<std::size_t>(cfg.query_len); ++j) {
          q.push_back(words[order[j]]);
        }
      }
      QueryExample ex;
      ex.text = join(q);
      ex.tokens = data.corpus.vocab.tokenize(ex.text);
      ex.gold_docid = static_cast<DocId>(d);
      bool test = mix_seed(cfg.seed, static_cast<std::uint64_t>(qid)) % 5 == 0;
      auto& dst = test ? data.test : data.train;
      ex.qid = static_cast<std::int32_t>(dst.size());
      dst.push_back(std::move(ex));
    }
  }
  return data;
}

}  // namespace ddsi
