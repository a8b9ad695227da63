#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "rallyproc/solver.hpp"

using namespace rallyproc;

namespace {

template <class F>
double seconds(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const char* name, double serial, double parallel, bool same) {
  std::printf("%-18s serial %8.3f s  parallel %8.3f s  speedup %5.2fx  %s\n", name, serial, parallel,
              serial / parallel, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int fit_samples = argc > 1 ? std::atoi(argv[1]) : 300;
  const int n = argc > 2 ? std::atoi(argv[2]) : 50;
  const CourtLayout layout = default_court();
  const GeneratorParams params = default_generator();
  const StateCensus census(layout.spec, layout.pruning);
  std::printf("threads %d, states %zu, fit samples %d, N %d\n", omp_get_max_threads(), census.num_transient(),
              fit_samples, n);

  DistributionSet serial_dists, dists;
  const double fs = seconds([&] { serial_dists = fit_all_serial(census, layout, params, fit_samples, 7); });
  const double fp = seconds([&] { dists = fit_all(census, layout, params, fit_samples, 7); });
  bool same = serial_dists.states.size() == dists.states.size();
  for (std::size_t s = 0; same && s < dists.states.size(); ++s)
    same = serial_dists.states[s].intention.probs == dists.states[s].intention.probs;
  report("fit_all", fs, fp, same);

  const BuildOptions opts{n, 50, 7};
  TransitionModel serial_model, model;
  const double bs = seconds([&] { serial_model = build_transitions_serial(census, layout, params, dists, Epsilon(13), opts); });
  const double bp = seconds([&] { model = build_transitions(census, layout, params, dists, Epsilon(13), opts); });
  same = true;
  for (StateId s = 0; same && s < model.num_transient; ++s) {
    const auto& a = serial_model.rows(s).actions;
    const auto& b = model.rows(s).actions;
    same = a.size() == b.size();
    for (std::size_t k = 0; same && k < a.size(); ++k) {
      same = a[k].entries.size() == b[k].entries.size();
      for (std::size_t e = 0; same && e < a[k].entries.size(); ++e)
        same = a[k].entries[e].next == b[k].entries[e].next && a[k].entries[e].prob == b[k].entries[e].prob;
    }
  }
  report("build_transitions", bs, bp, same);

  const ValueFunction v = evaluate_mrp(model, intentions_of(dists));
  std::vector<double> out_s(model.num_states()), out_p(model.num_states());
  std::vector<ActionId> arg_s(model.num_transient), arg_p(model.num_transient);
  constexpr int kSweeps = 50;
  const double vs = seconds([&] {
    for (int i = 0; i < kSweeps; ++i) bellman_backup_serial(model, v.values, out_s, arg_s);
  });
  const double vp = seconds([&] {
    for (int i = 0; i < kSweeps; ++i) bellman_backup(model, v.values, out_p, arg_p);
  });
  report("bellman_backup x50", vs, vp, out_s == out_p && arg_s == arg_p);
  return 0;
}
