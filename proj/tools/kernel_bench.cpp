// Times the parallel band kernels against their serial references across a
// grid of sizes and bandwidths, and checks that the two produce identical
// bits on every cell before reporting.  Output is a plain table plus CSV
// rows suitable for plotting.
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "bandgm/gradcheck.hpp"
#include "bandgm/kernels.hpp"

using namespace bandgm;
using Index = Eigen::Index;

namespace {

template <class F>
double median_ms(F&& f, int reps) {
  f();
  std::vector<double> t(static_cast<std::size_t>(reps));
  for (double& x : t) {
    const auto start = std::chrono::steady_clock::now();
    f();
    x = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

bool same_bits(const BandedMatrix& a, const BandedMatrix& b) {
  return a.n() == b.n() && a.lower() == b.lower() && a.upper() == b.upper() &&
         (a.storage().array() == b.storage().array()).all();
}

bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

struct Row {
  std::string op;
  Index n;
  Index bw;
  double parallel_ms;
  double serial_ms;
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<Index> sizes = {2000, 8000, 32000};
  std::vector<Index> bandwidths = {3, 7, 15};
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    const auto take_long = [&](const char* name) {
      if (++i == argc) {
        std::cerr << name << " needs a value\n";
        std::exit(2);
      }
      return std::stol(argv[i]);
    };
    if (arg == "--reps") {
      reps = static_cast<int>(take_long("--reps"));
    } else if (arg == "--sizes") {
      sizes.clear();
      std::string list = argv[++i];
      for (std::size_t pos = 0; pos < list.size();) {
        const auto comma = list.find(',', pos);
        sizes.push_back(std::stol(list.substr(pos, comma - pos)));
        pos = comma == std::string::npos ? list.size() : comma + 1;
      }
    } else if (arg == "--bandwidths") {
      bandwidths.clear();
      std::string list = argv[++i];
      for (std::size_t pos = 0; pos < list.size();) {
        const auto comma = list.find(',', pos);
        bandwidths.push_back(std::stol(list.substr(pos, comma - pos)));
        pos = comma == std::string::npos ? list.size() : comma + 1;
      }
    } else {
      std::cerr << "usage: kernel_bench [--sizes a,b,...] [--bandwidths a,b,...] [--reps k]\n";
      return arg == "--help" || arg == "-h" ? 0 : 2;
    }
  }

  std::vector<Row> rows;
  bool all_match = true;
  for (const Index n : sizes) {
    for (const Index bw : bandwidths) {
      std::mt19937_64 rng(0x9e3779b97f4a7c15ull ^ static_cast<std::uint64_t>(n * 131 + bw));
      const SymmetricBandedMatrix q = gradcheck::random_spd_band(rng, n, bw);
      const BandedMatrix l = ops::cholesky(q);
      const Eigen::VectorXd v = gradcheck::random_vec(rng, n);
      const BandedMatrix r = gradcheck::random_band(rng, n, bw, bw);

      const auto cell = [&](const std::string& op, auto&& par, auto&& ser) {
        const auto got_par = par();
        const auto got_ser = ser();
        if (!same_bits(got_par, got_ser)) {
          all_match = false;
          std::cerr << "MISMATCH " << op << " n=" << n << " bw=" << bw << "\n";
        }
        rows.push_back({op, n, bw, median_ms(par, reps), median_ms(ser, reps)});
      };

      cell(
          "cholesky", [&] { return ops::cholesky(q); },
          [&] { return ops::serial::cholesky_ref(q); });
      cell(
          "solve_vec", [&] { return ops::solve_vec(l, v, false); },
          [&] { return ops::serial::solve_vec_ref(l, v, false); });
      cell(
          "solve_mat", [&] { return ops::solve_mat(l, r, bw, bw, false); },
          [&] { return ops::serial::solve_mat_ref(l, r, bw, bw, false); });
      cell(
          "sparse_inverse_subset",
          [&] { return ops::sparse_inverse_subset(l).lower_store(); },
          [&] { return ops::serial::sparse_inverse_subset_ref(l).lower_store(); });
      cell(
          "product_band_band_restricted",
          [&] { return ops::product_band_band_restricted(l, r, bw, bw); },
          [&] { return ops::serial::product_band_band_restricted_ref(l, r, bw, bw); });
      cell(
          "product_band_vec", [&] { return ops::product_band_vec(r, v, false); },
          [&] { return ops::serial::product_band_vec_ref(r, v, false); });
      cell(
          "outer_band", [&] { return ops::outer_band(v, v, bw, bw); },
          [&] { return ops::serial::outer_band_ref(v, v, bw, bw); });
    }
  }

  std::printf("%-30s %8s %5s %14s %12s %8s\n", "op", "n", "bw", "parallel_ms", "serial_ms",
              "speedup");
  for (const Row& row : rows)
    std::printf("%-30s %8lld %5lld %14.3f %12.3f %8.2f\n", row.op.c_str(),
                static_cast<long long>(row.n), static_cast<long long>(row.bw), row.parallel_ms,
                row.serial_ms, row.serial_ms / std::max(row.parallel_ms, 1e-9));
  std::printf("\ncsv,op,n,bandwidth,parallel_ms,serial_ms\n");
  for (const Row& row : rows)
    std::printf("csv,%s,%lld,%lld,%.6f,%.6f\n", row.op.c_str(), static_cast<long long>(row.n),
                static_cast<long long>(row.bw), row.parallel_ms, row.serial_ms);
  if (!all_match) {
    std::cerr << "parallel and serial kernels disagree\n";
    return 1;
  }
  return 0;
}
