#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "factgen/cli.hpp"
#include "factgen/corpus.hpp"
#include "factgen/errors.hpp"
#include "factgen/evaluator.hpp"
#include "factgen/retriever.hpp"
#include "factgen/sampler.hpp"

namespace py = pybind11;
using namespace factgen;

namespace {

py::tuple run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = cli::dispatch(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

std::vector<py::dict> retrieve(const std::vector<std::pair<std::string, std::string>>& docs, const std::string& claim,
                               int k1, int k2) {
  std::vector<SourceDocument> src;
  for (const auto& [id, text] : docs) src.push_back({id, text});
  auto index = TfIdfIndex::build(src);
  TfIdfSentenceEncoder enc(index);
  std::vector<py::dict> out;
  for (const auto& f : retrieve_facts(claim, index, enc, {k1, k2}).items) {
    py::dict d;
    d["text"] = f.text;
    d["doc_id"] = f.doc_id;
    d["doc_rank"] = f.doc_rank;
    d["position"] = f.position;
    d["similarity"] = f.similarity;
    out.push_back(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_factgen, m) {
  m.doc() = "Bindings to the factgen C++ core";
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);

  m.def("run", &run, py::arg("args"),
        "Run one CLI subcommand in-process; returns (exit_code, stdout, stderr).");
  m.def("tokenize", [](const std::string& text) { return default_tokenizer().split(text); }, py::arg("text"));
  m.def("split_sentences", &split_sentences, py::arg("text"));
  m.def("retrieve", &retrieve, py::arg("docs"), py::arg("claim"), py::arg("k1") = 10, py::arg("k2") = 5,
        "Facts for a claim from (id, text) documents, best first.");
  m.def(
      "bleu",
      [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs) { return bleu(hyps, refs); },
      py::arg("hypotheses"), py::arg("references"));
  m.def(
      "entities", [](const std::string& text) { return RuleBasedRecognizer{}.extract(text); }, py::arg("text"));
  m.def(
      "richness", [](const std::string& text) { return richness(text, RuleBasedRecognizer{}); }, py::arg("text"));
  m.def(
      "stance",
      [](const std::string& claim, const std::string& content) {
        return std::string(to_string(LexicalStanceModel{}.classify(claim, content)));
      },
      py::arg("claim"), py::arg("content"));
  m.def(
      "consistency",
      [](const std::vector<std::pair<std::string, std::string>>& pairs) {
        return consistency(pairs, LexicalStanceModel{});
      },
      py::arg("pairs"));
  m.def(
      "nucleus_filter",
      [](const std::vector<double>& probs, double p) { return nucleus_filter(probs, p); }, py::arg("probabilities"),
      py::arg("p"));
}
