#pragma once

#include <cstdint>
#include <string>

namespace sf {

// Tri-plane point queries vs a parameter-matched MLP baseline (an 8x128
// perceptron on gamma_v(x)). Throughput in queries/second at equal batch
// sizes; >= `reps` repetitions with the minimum time taken, warmup excluded.
struct BenchReport {
  int64_t n_points = 0;
  int batch = 4096;
  int reps = 3;
  int64_t plane_res = 96;
  int64_t feature_dim = 16;
  double triplane_qps = 0;
  double mlp_qps = 0;
  double ratio = 0;
  bool empty = true;
};

BenchReport bench_query(int64_t n_points, uint64_t seed = 1, int batch = 4096, int reps = 3,
                        int64_t plane_res = 96, int64_t feature_dim = 16);

void print_bench_report(const BenchReport& r);
void write_bench_report(const std::string& path, const BenchReport& r);

}  // namespace sf
