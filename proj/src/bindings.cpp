#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "chainreduce/config.hpp"
#include "chainreduce/metrics.hpp"
#include "chainreduce/sim.hpp"

namespace py = pybind11;
using namespace chainreduce;

PYBIND11_MODULE(_chainreduce, m) {
    m.doc() = "ChainSGD-reduce core operations";

    py::class_<ParamVector>(m, "ParamVector")
        .def(py::init<std::vector<double>, double>(), py::arg("values"),
             py::arg("theta") = 1.0)
        .def_readwrite("values", &ParamVector::values)
        .def_readwrite("theta", &ParamVector::theta)
        .def("__len__", &ParamVector::size);

    m.def("pair_aggregate", &pair_aggregate, py::arg("receiver"), py::arg("incoming"));
    m.def("central_aggregate", &central_aggregate, py::arg("gradients"));
    m.def("neighbor_aggregate", &neighbor_aggregate, py::arg("own"),
          py::arg("neighbors"), py::arg("m"));
    m.def("sgd_step", &sgd_step, py::arg("weights"), py::arg("global_gradient"),
          py::arg("eta"));

    py::class_<PairTask>(m, "PairTask")
        .def_readonly("sender", &PairTask::sender)
        .def_readonly("receiver", &PairTask::receiver)
        .def("__repr__", [](const PairTask& p) {
            return "PairTask(" + std::to_string(p.sender) + " -> " +
                   std::to_string(p.receiver) + ")";
        });

    py::class_<SchedulePlan>(m, "SchedulePlan")
        .def_readonly("rounds", &SchedulePlan::rounds)
        .def_readonly("deferred", &SchedulePlan::deferred)
        .def("pair_count", &SchedulePlan::pair_count)
        .def("survivor", &SchedulePlan::survivor);

    m.def("ring_plan", &ring_plan, py::arg("devices"));
    m.def("tree_plan", &tree_plan, py::arg("devices"));

    py::class_<RLConfig>(m, "RLConfig")
        .def(py::init<>())
        .def_readwrite("alpha", &RLConfig::alpha)
        .def_readwrite("beta", &RLConfig::beta)
        .def_readwrite("rho", &RLConfig::rho)
        .def_readwrite("phi", &RLConfig::phi)
        .def_readwrite("max_epoch", &RLConfig::max_epoch);

    m.def("threshold", &threshold, py::arg("n"), py::arg("config"));

    py::class_<DqnAgent>(m, "Agent")
        .def(py::init([](int n, const RLConfig& cfg, std::uint64_t seed) {
                 return DqnAgent(n, cfg, seed);
             }),
             py::arg("num_devices"), py::arg("config"), py::arg("seed"))
        .def("train",
             [](DqnAgent& a, const std::vector<bool>& busy, int max_epoch) {
                 const auto r = a.train(busy, max_epoch);
                 return py::dict(py::arg("rewards") = r.rewards,
                                 py::arg("converged") = r.converged,
                                 py::arg("episodes_to_converge") = r.episodes_to_converge);
             },
             py::arg("busy"), py::arg("max_epoch") = -1)
        .def("plan", [](const DqnAgent& a, const std::vector<bool>& busy) {
            return plan_from_policy(a, busy);
        });

    m.def(
        "run_experiment",
        [](int num_devices, std::uint64_t seed, const std::string& scheduler,
           int epochs, int agg_rounds, double eta, bool busy) {
            SimConfig cfg;
            cfg.num_devices = num_devices;
            cfg.seed = seed;
            cfg.busy.enabled = busy;
            TrainHyper hyper{eta, epochs, agg_rounds};
            const SimTrace trace =
                run_experiment(cfg, hyper, scheduler_kind_from_string(scheduler));
            return py::module_::import("json").attr("loads")(
                trace.metrics_json().dump());
        },
        py::arg("num_devices"), py::arg("seed"), py::arg("scheduler"),
        py::arg("epochs") = 2, py::arg("agg_rounds") = 2, py::arg("eta") = 0.05,
        py::arg("busy") = false);

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<DimensionMismatch>(m, "DimensionMismatch", PyExc_ValueError);
    py::register_exception<InvariantViolation>(m, "InvariantViolation", PyExc_RuntimeError);
}
