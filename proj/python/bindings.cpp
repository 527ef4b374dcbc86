#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ddsi/checkpoint.hpp"
#include "ddsi/corpus.hpp"
#include "ddsi/error.hpp"
#include "ddsi/metrics.hpp"
#include "ddsi/mmr.hpp"
#include "ddsi/model.hpp"
#include "ddsi/train.hpp"
#include "ddsi/version.hpp"

namespace py = pybind11;
using namespace ddsi;

namespace {

py::array_t<double> as_matrix(const std::vector<double>& data, std::int64_t rows, std::int64_t cols) {
  py::array_t<double> out({rows, cols});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

py::array_t<double> as_vector(const std::vector<double>& data) {
  py::array_t<double> out(static_cast<py::ssize_t>(data.size()));
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

std::vector<std::pair<DocId, double>> entries(const RankedList& list) {
  std::vector<std::pair<DocId, double>> out;
  for (const auto& e : list.entries) out.emplace_back(e.docid, e.score);
  return out;
}

EvalRun make_run(const std::vector<std::vector<DocId>>& lists, const std::vector<DocId>& golds) {
  if (lists.size() != golds.size()) throw Error(Errc::ShapeMismatch, "one gold docid per list required");
  EvalRun run;
  for (std::size_t i = 0; i < lists.size(); ++i) {
    RankedList l;
    l.qid = static_cast<std::int32_t>(i);
    for (auto d : lists[i]) l.entries.push_back({d, 0.0});
    run.push_back({std::move(l), golds[i]});
  }
  return run;
}

py::dict loss_dict(const LossBreakdown& l) {
  py::dict d;
  d["ce"] = l.ce;
  d["diversity"] = l.diversity;
  d["alpha"] = l.alpha;
  d["total"] = l.total;
  d["selected_topk"] = l.selected_topk;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Differentiable search index with a training-time diversity term";
  m.attr("__version__") = kVersion;

  static py::exception<Error> error_type(m, "DdsiError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error_type, e.what());
    }
  });

  py::class_<Vocab>(m, "Vocab")
      .def("__len__", &Vocab::size)
      .def("tokenize", &Vocab::tokenize)
      .def("lookup", &Vocab::lookup)
      .def("word", &Vocab::word);

  py::class_<Document>(m, "Document")
      .def_readonly("docid", &Document::docid)
      .def_readonly("title", &Document::title)
      .def_readonly("text", &Document::text)
      .def_readonly("tokens", &Document::tokens);

  py::class_<QueryExample>(m, "QueryExample")
      .def_readonly("qid", &QueryExample::qid)
      .def_readonly("text", &QueryExample::text)
      .def_readonly("tokens", &QueryExample::tokens)
      .def_readonly("gold_docid", &QueryExample::gold_docid);

  py::class_<Corpus>(m, "Corpus")
      .def("__len__", &Corpus::size)
      .def_readonly("docs", &Corpus::docs)
      .def_readonly("vocab", &Corpus::vocab);

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("num_topics", &SyntheticConfig::num_topics)
      .def_readwrite("docs_per_topic", &SyntheticConfig::docs_per_topic)
      .def_readwrite("vocab_per_topic", &SyntheticConfig::vocab_per_topic)
      .def_readwrite("shared_vocab", &SyntheticConfig::shared_vocab)
      .def_readwrite("doc_len", &SyntheticConfig::doc_len)
      .def_readwrite("queries_per_doc", &SyntheticConfig::queries_per_doc)
      .def_readwrite("query_len", &SyntheticConfig::query_len)
      .def_readwrite("near_duplicate_fraction", &SyntheticConfig::near_duplicate_fraction)
      .def_readwrite("seed", &SyntheticConfig::seed);

  m.def("split_words", &split_words);
  m.def("generate_synthetic", [](const SyntheticConfig& cfg) {
    auto d = generate_synthetic(cfg);
    return py::make_tuple(std::move(d.corpus), std::move(d.train), std::move(d.test));
  });
  m.def("load_corpus", &load_corpus, py::arg("path"));
  m.def("load_queries", &load_queries, py::arg("path"), py::arg("corpus"));

  py::class_<Dims>(m, "Dims")
      .def_readonly("vocab", &Dims::vocab)
      .def_readonly("dim", &Dims::dim)
      .def_readonly("docs", &Dims::docs);

  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("dims", &ModelParams::dims)
      .def("param_count", &ModelParams::size)
      .def_property_readonly("embed", [](const ModelParams& p) { return as_matrix(p.embed, p.dims.vocab, p.dims.dim); })
      .def_property_readonly("hidden_w", [](const ModelParams& p) { return as_matrix(p.hidden_w, p.dims.dim, p.dims.dim); })
      .def_property_readonly("hidden_b", [](const ModelParams& p) { return as_vector(p.hidden_b); })
      .def_property_readonly("cls_w", [](const ModelParams& p) { return as_matrix(p.cls_w, p.dims.docs, p.dims.dim); })
      .def_property_readonly("cls_b", [](const ModelParams& p) { return as_vector(p.cls_b); });

  m.def("init_model", &init_model, py::arg("vocab"), py::arg("dim"), py::arg("docs"), py::arg("seed"));
  m.def("encode_query", [](const ModelParams& p, const TokenSeq& t) { return as_vector(encode_query(p, t)); });
  m.def("forward", [](const ModelParams& p, const TokenSeq& t) { return as_vector(forward(p, t)); });
  m.def("softmax", [](const std::vector<double>& z) { return as_vector(softmax(z)); });
  m.def("top_k", [](const std::vector<double>& z, std::int64_t k) { return entries(top_k(z, k)); });
  m.def("cosine", [](const std::vector<double>& u, const std::vector<double>& v) { return cosine(u, v); });
  m.def("save_checkpoint", &save_checkpoint);
  m.def("load_checkpoint", &load_checkpoint);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("k", &TrainConfig::k)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("dim", &TrainConfig::dim)
      .def_property(
          "optimizer", [](const TrainConfig& c) { return to_string(c.optimizer); },
          [](TrainConfig& c, const std::string& s) { c.optimizer = parse_optimizer(s); });

  m.def("cross_entropy", [](const std::vector<double>& probs, DocId gold) { return cross_entropy(probs, gold); });
  m.def("diversity_term", [](const ModelParams& p, const std::vector<DocId>& topk) { return diversity_term(p, topk); });
  m.def("total_loss", [](const ModelParams& p, const std::vector<QueryExample>& batch, const TrainConfig& cfg) {
    return loss_dict(total_loss(p, batch, cfg));
  });
  m.def(
      "train",
      [](const Corpus& corpus, const std::vector<QueryExample>& queries, const TrainConfig& cfg) {
        TrainResult res;
        {
          py::gil_scoped_release release;
          res = train(corpus, queries, cfg);
        }
        py::list history;
        for (const auto& r : res.history) {
          auto d = loss_dict(r.loss);
          d["epoch"] = r.epoch;
          d["train_hits1"] = r.train_hits1;
          history.append(d);
        }
        return py::make_tuple(std::move(res.params), history);
      },
      py::arg("corpus"), py::arg("queries"), py::arg("config"));

  m.def(
      "mmr_rerank",
      [](const std::vector<double>& query, const std::vector<DocId>& docids,
         py::array_t<double, py::array::c_style | py::array::forcecast> vectors, double lambda,
         std::int64_t m_out) {
        if (vectors.ndim() != 2 || static_cast<std::size_t>(vectors.shape(0)) != docids.size() ||
            static_cast<std::size_t>(vectors.shape(1)) != query.size()) {
          throw Error(Errc::ShapeMismatch, "vectors must be len(docids) x len(query)");
        }
        const auto dim = static_cast<std::size_t>(vectors.shape(1));
        std::vector<Candidate> cands;
        for (std::size_t i = 0; i < docids.size(); ++i) {
          cands.push_back({docids[i], std::span<const double>(vectors.data() + i * dim, dim)});
        }
        MmrConfig cfg{lambda, m_out, static_cast<std::int64_t>(docids.size())};
        return entries(mmr_rerank(query, cands, cfg));
      },
      py::arg("query"), py::arg("docids"), py::arg("vectors"), py::arg("lambda_"), py::arg("m"));
  m.def(
      "retrieve_then_rerank",
      [](const ModelParams& p, const TokenSeq& tokens, double lambda, std::int64_t m_out, std::int64_t pool) {
        return entries(retrieve_then_rerank(p, tokens, MmrConfig{lambda, m_out, pool}));
      },
      py::arg("params"), py::arg("tokens"), py::arg("lambda_"), py::arg("m"), py::arg("pool"));

  m.def("hits_at_k", [](const std::vector<std::vector<DocId>>& lists, const std::vector<DocId>& golds,
                        std::int64_t k) { return hits_at_k(make_run(lists, golds), k); });
  m.def("mrr_at_k", [](const std::vector<std::vector<DocId>>& lists, const std::vector<DocId>& golds,
                       std::int64_t k) { return mrr_at_k(make_run(lists, golds), k); },
        py::arg("lists"), py::arg("golds"), py::arg("k") = 10);
  m.def("lcs_len", [](const TokenSeq& a, const TokenSeq& b) { return lcs_len(a, b); });
  m.def("rouge_l", [](const TokenSeq& a, const TokenSeq& b) { return rouge_l(a, b); });
  m.def("homogenization", [](const std::vector<TokenSeq>& docs) { return homogenization(docs); });
  m.def("ngd", [](const std::vector<TokenSeq>& docs) { return ngd(docs); });
  m.def("compression_ratio", [](const std::vector<std::string>& texts) { return compression_ratio(texts); });
  m.def(
      "evaluate",
      [](const ModelParams& p, const std::vector<QueryExample>& queries, const Corpus& corpus,
         std::int64_t cutoff) {
        auto r = evaluate(p, queries, corpus, cutoff);
        py::dict d;
        d["hits1"] = r.hits1;
        d["hits5"] = r.hits5;
        d["hits10"] = r.hits10;
        d["mrr10"] = r.mrr10;
        d["rouge_l_hom"] = r.rouge_l_hom;
        d["ngd"] = r.ngd;
        d["cr"] = r.cr;
        d["num_queries"] = r.num_queries;
        return d;
      },
      py::arg("params"), py::arg("queries"), py::arg("corpus"), py::arg("cutoff") = 10);
}
