// Benchmark for the bulk screening kernels: serial reference lane vs the
// OpenMP lane, over a planted synthetic dataset at a configurable scale.
//
//   screenlm-bench [--docs N] [--topics T] [--reps R] [--seed S]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "screenlm/pipeline.hpp"
#include "screenlm/synthetic.hpp"

using namespace screenlm;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct Args {
    long docs = 600000;
    int topics = 200;
    int reps = 3;
    std::uint64_t seed = 42;
};

Args parse_args(int argc, char** argv) {
    Args a;
    for (int i = 1; i < argc; ++i) {
        auto want = [&](const char* flag) {
            if (std::strcmp(argv[i], flag) != 0) return false;
            if (i + 1 >= argc) {
                std::fprintf(stderr, "%s needs a value\n", flag);
                std::exit(2);
            }
            return true;
        };
        if (want("--docs"))
            a.docs = std::atol(argv[++i]);
        else if (want("--topics"))
            a.topics = std::atoi(argv[++i]);
        else if (want("--reps"))
            a.reps = std::atoi(argv[++i]);
        else if (want("--seed"))
            a.seed = static_cast<std::uint64_t>(std::atoll(argv[++i]));
        else {
            std::fprintf(stderr, "usage: screenlm-bench [--docs N] [--topics T] [--reps R] [--seed S]\n");
            std::exit(2);
        }
    }
    return a;
}

struct LaneTimes {
    double margins = 0, normalize = 0, decide = 0, evaluate = 0, total = 0;
};

LaneTimes run_lane(const pipeline::ScoreMatrix& m, pipeline::Exec exec,
                   const evaluation::MetricConfig& metrics) {
    LaneTimes t;
    std::vector<double> raw(m.docs()), norm(m.docs());
    std::vector<std::uint8_t> include(m.docs());
    std::vector<double> thetas(m.topics(), 0.5);

    auto t0 = Clock::now();
    pipeline::margins(m, raw, exec);
    t.margins = ms_since(t0);

    t0 = Clock::now();
    pipeline::normalize(m, raw, norm, exec);
    t.normalize = ms_since(t0);

    t0 = Clock::now();
    pipeline::decide_calibrated(m, norm, thetas, include, exec);
    t.decide = ms_since(t0);

    t0 = Clock::now();
    auto evals = pipeline::evaluate(m, include, metrics, exec);
    t.evaluate = ms_since(t0);
    if (evals.empty()) std::abort();

    t.total = t.margins + t.normalize + t.decide + t.evaluate;
    return t;
}

} // namespace

int main(int argc, char** argv) {
    const Args args = parse_args(argc, argv);

    synthetic::DatasetSpec spec;
    spec.topics = args.topics;
    spec.docs_per_topic = static_cast<int>(args.docs / args.topics);
    spec.seed = args.seed;
    const corpus::Dataset ds = synthetic::make_planted_dataset(spec);

    std::vector<scoring::ScoreRecord> records;
    records.reserve(static_cast<std::size_t>(args.docs));
    for (const auto& topic : ds.topics)
        for (const auto& c : ds.candidates_for(topic.topic_id))
            records.push_back(synthetic::synthetic_score("bench", topic.topic_id, c.doc_id, args.seed,
                                                         ds.labels.find(topic.topic_id, c.doc_id)));

    const pipeline::ScoreMatrix m = pipeline::make_matrix(ds, records);
    const evaluation::MetricConfig metrics;

#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: not compiled in; both lanes run serially\n");
#endif
    std::printf("documents: %zu  topics: %zu  reps: %d\n\n", m.docs(), m.topics(), args.reps);
    std::printf("%-10s %-8s %10s %10s %10s %10s %10s\n", "lane", "rep", "margins", "normalize",
                "decide", "evaluate", "total(ms)");

    LaneTimes best_serial, best_omp;
    best_serial.total = best_omp.total = 1e300;
    for (int rep = 1; rep <= args.reps; ++rep) {
        const LaneTimes s = run_lane(m, pipeline::Exec::serial, metrics);
        std::printf("%-10s %-8d %10.2f %10.2f %10.2f %10.2f %10.2f\n", "serial", rep, s.margins,
                    s.normalize, s.decide, s.evaluate, s.total);
        if (s.total < best_serial.total) best_serial = s;

        const LaneTimes p = run_lane(m, pipeline::Exec::openmp, metrics);
        std::printf("%-10s %-8d %10.2f %10.2f %10.2f %10.2f %10.2f\n", "openmp", rep, p.margins,
                    p.normalize, p.decide, p.evaluate, p.total);
        if (p.total < best_omp.total) best_omp = p;
    }
    std::printf("\nbest serial: %.2f ms   best openmp: %.2f ms   speedup: %.2fx\n", best_serial.total,
                best_omp.total, best_serial.total / best_omp.total);
    return 0;
}
