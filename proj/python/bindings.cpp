// Python bindings. Structured results cross the boundary as JSON text; the
// package wrapper turns them into dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <string>
#include <vector>

#include "corect/errors.hpp"
#include "corect/oracle.hpp"
#include "corect/workbench.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace corect;

namespace {

class Workbench {
 public:
  explicit Workbench(const std::string& config_json)
      : cfg_(experiment_config_from_json(config_json.empty() ? "{}" : config_json)) {
    cfg_.validate();
    set_ = generate_conflict_set(cfg_.model, cfg_.n_examples, cfg_.seed, cfg_.conflict_fraction, cfg_.generator);
  }

  static Workbench load(const std::string& config_json, const std::string& dir) {
    Workbench wb(config_json, 0);
    wb.set_.weights = load_weights(fs::path(dir) / "weights.bin");
    wb.set_.examples = read_examples_jsonl(fs::path(dir) / "examples.jsonl");
    for (const auto& e : wb.set_.examples) wb.set_.facts.push_back(e.fact);
    return wb;
  }

  void save(const std::string& dir) const {
    fs::create_directories(dir);
    save_weights(set_.weights, fs::path(dir) / "weights.bin");
    write_examples_jsonl(fs::path(dir) / "examples.jsonl", set_.examples);
  }

  std::string config() const { return to_json(cfg_); }

  std::vector<std::string> examples() const {
    std::vector<std::string> out;
    for (const auto& e : set_.examples) out.push_back(to_jsonl_line(e));
    return out;
  }

  std::vector<std::string> decode(const std::string& id, const std::string& method) const {
    const ConflictExample& e = find(id);
    DecodeOptions opts;
    opts.max_new = cfg_.max_new;
    DecodeOutput o;
    if (method == "corect") {
      o = decode_corect(set_.weights, e.prompt, cfg_.selection, cfg_.rectify, opts);
    } else {
      BaselineConfig b = cfg_.baseline;
      b.method = baseline_from_string(method);
      o = decode_baseline(set_.weights, e.prompt, b, opts);
    }
    std::vector<std::string> out;
    for (const auto& s : o.steps) out.push_back(to_jsonl_line(s));
    return out;
  }

  std::string trace(const std::string& id) const {
    const ConflictExample& e = find(id);
    const ForwardResult r = forward_traced(set_.weights, e.prompt.ctx_tokens);
    TrajectoryRecord t;
    t.example_id = e.id;
    t.gold = e.gold;
    t.final_pred = argmax(r.logits);
    t.mode = cfg_.selection.lens;
    const RankTrajectory traj = rank_trajectory(r.trace, e.gold, set_.weights, t.mode);
    t.ranks = traj.ranks;
    t.label = classify_flip(traj, t.final_pred, e.gold, cfg_.boundary_fraction).label;
    return to_jsonl_line(t);
  }

  std::string causal(const std::string& id, const std::string& target) const {
    const ConflictExample& e = find(id);
    if (target != "gold" && target != "parametric") throw ValidationError("target must be gold or parametric");
    const double sigma = cfg_.sigma > 0.0 ? cfg_.sigma : default_noise_sigma(set_.weights);
    return to_json(causal_trace(set_.weights, e.prompt.ctx_tokens, e.subject_begin, e.subject_end,
                                target == "gold" ? e.gold : e.parametric, sigma, cfg_.noise_samples, cfg_.seed));
  }

  std::vector<std::string> run() const {
    std::vector<std::string> out;
    for (const auto& r : run_experiment(cfg_, set_)) out.push_back(to_jsonl_line(r));
    return out;
  }

  std::string compare(const std::string& out_dir) const {
    const auto records = run_experiment(cfg_, set_);
    emit_report(records, out_dir);
    return summary_csv(summarize(records));
  }

  std::vector<py::tuple> sweep(const std::string& axis) const {
    std::vector<py::tuple> out;
    for (const auto& p : run_sweep(cfg_, set_, sweep_axis_from_string(axis)))
      out.push_back(py::make_tuple(p.x, p.mean, p.stderr_, p.n));
    return out;
  }

 private:
  Workbench(const std::string& config_json, int)
      : cfg_(experiment_config_from_json(config_json.empty() ? "{}" : config_json)) {
    cfg_.validate();
  }

  const ConflictExample& find(const std::string& id) const {
    if (id.empty() && !set_.examples.empty()) return set_.examples.front();
    for (const auto& e : set_.examples)
      if (e.id == id) return e;
    throw ValidationError("no example with id '" + id + "'");
  }

  ExperimentConfig cfg_;
  ConflictSet set_;
};

}  // namespace

PYBIND11_MODULE(_corect, m) {
  m.doc() = "native core of the corect package";

  static py::exception<Error> base(m, "CorectError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  m.def("softmax", [](const std::vector<double>& z) { return softmax(z).probs(); });
  m.def("jensen_shannon", [](const std::vector<double>& p, const std::vector<double>& q) {
    return jensen_shannon(ProbDist(p), ProbDist(q));
  });
  m.def("cad_step", [](const std::vector<double>& p, const std::vector<double>& q, double alpha) {
    return cad_step(ProbDist(p), ProbDist(q), alpha).probs();
  }, py::arg("p_ctx"), py::arg("p_null"), py::arg("alpha") = 1.0);
  m.def("adacad_step", [](const std::vector<double>& p, const std::vector<double>& q) {
    const AdaptiveStep s = adacad_step(ProbDist(p), ProbDist(q));
    return py::make_tuple(s.dist.probs(), s.alpha_t);
  });
  m.def("make_patch", [](const std::vector<double>& u, const std::vector<double>& w, double alpha) {
    return make_patch(u, w, alpha);
  }, py::arg("u"), py::arg("w_target"), py::arg("alpha") = 1.0);

  py::class_<Workbench>(m, "Workbench")
      .def(py::init<const std::string&>(), py::arg("config_json") = "{}")
      .def_static("load", &Workbench::load, py::arg("config_json"), py::arg("dir"))
      .def("save", &Workbench::save)
      .def("config", &Workbench::config)
      .def("examples", &Workbench::examples)
      .def("decode", &Workbench::decode, py::arg("example_id") = "", py::arg("method") = "corect")
      .def("trace", &Workbench::trace, py::arg("example_id") = "")
      .def("causal", &Workbench::causal, py::arg("example_id") = "", py::arg("target") = "gold")
      .def("run", &Workbench::run, py::call_guard<py::gil_scoped_release>())
      .def("compare", &Workbench::compare, py::call_guard<py::gil_scoped_release>())
      .def("sweep", &Workbench::sweep);
}
