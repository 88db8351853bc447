#pragma once

#include "covfk/fk.hpp"
#include "covfk/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace covfk::detail {

constexpr long kBlock = 4096;

inline void inv_small(const FiberMat& in, FiberMat& out) {
    const int d = static_cast<int>(in.rows());
    if (d == 1) {
        out.resize(1, 1);
        out(0, 0) = 1.0 / in(0, 0);
        return;
    }
    if (d == 2) {
        const cplx det = in(0, 0) * in(1, 1) - in(0, 1) * in(1, 0);
        out.resize(2, 2);
        out(0, 0) = in(1, 1) / det;
        out(1, 1) = in(0, 0) / det;
        out(0, 1) = -in(0, 1) / det;
        out(1, 0) = -in(1, 0) / det;
        return;
    }
    CMat big = in;
    out = FiberMat(big.inverse());
}

// Welford/Chan accumulator for complex matrix samples with a real weight;
// block-ordered combination keeps results independent of the worker count.
struct Accumulator {
    long n = 0;
    CMat mean_n;
    Eigen::MatrixXd m2_n;
    double mean_w = 0;
    double m2_w = 0;
    CMat comoment;
    long rejected = 0;

    void init(Eigen::Index rows, Eigen::Index cols) {
        mean_n = CMat::Zero(rows, cols);
        m2_n = Eigen::MatrixXd::Zero(rows, cols);
        comoment = CMat::Zero(rows, cols);
    }

    void add(const CMat& sample, double w) {
        ++n;
        const double dw = w - mean_w;
        mean_w += dw / static_cast<double>(n);
        m2_w += dw * (w - mean_w);
        CMat dn = sample - mean_n;
        mean_n += dn / static_cast<double>(n);
        m2_n.noalias() += (dn.conjugate().cwiseProduct(sample - mean_n)).real();
        comoment.noalias() += dn * (w - mean_w);
    }

    void combine(const Accumulator& b) {
        if (b.n == 0) {
            rejected += b.rejected;
            return;
        }
        if (n == 0) {
            const long rej = rejected;
            *this = b;
            rejected += rej;
            return;
        }
        const double na = static_cast<double>(n), nb = static_cast<double>(b.n);
        const double nn = na + nb;
        const double f = na * nb / nn;
        CMat dn = b.mean_n - mean_n;
        const double dw = b.mean_w - mean_w;
        m2_n += b.m2_n + f * dn.cwiseAbs2();
        m2_w += b.m2_w + f * dw * dw;
        comoment += b.comoment + f * dn * dw;
        mean_n += (nb / nn) * dn;
        mean_w += (nb / nn) * dw;
        n += b.n;
        rejected += b.rejected;
    }
};

using PathFn = std::function<bool(long path_index, CMat& sample, double& weight)>;

inline Accumulator run_paths(long n_paths, int workers, Eigen::Index rows,
                             Eigen::Index cols, const PathFn& fn, bool abort_on_nonfinite) {
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    const long n_blocks = (n_paths + kBlock - 1) / kBlock;
    workers = static_cast<int>(std::min<long>(workers, n_blocks));

    std::vector<Accumulator> blocks(static_cast<std::size_t>(n_blocks));
    std::atomic<long> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto work = [&] {
        CMat sample(rows, cols);
        try {
            for (;;) {
                const long b = next.fetch_add(1);
                if (b >= n_blocks) break;
                Accumulator acc;
                acc.init(rows, cols);
                const long lo = b * kBlock;
                const long hi = std::min(n_paths, lo + kBlock);
                for (long i = lo; i < hi; ++i) {
                    double w = 1.0;
                    const bool ok = fn(i, sample, w);
                    if (!ok || !sample.allFinite() || !std::isfinite(w)) {
                        if (abort_on_nonfinite)
                            throw NumericError("non-finite Monte Carlo sample at path " +
                                               std::to_string(i));
                        ++acc.rejected;
                        continue;
                    }
                    acc.add(sample, w);
                }
                blocks[static_cast<std::size_t>(b)] = std::move(acc);
            }
        } catch (...) {
            std::scoped_lock lock(error_mutex);
            if (!error) error = std::current_exception();
            next.store(n_blocks);
        }
    };

    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    Accumulator total;
    total.init(rows, cols);
    for (auto& b : blocks) total.combine(b);
    return total;
}

inline RngConfig path_stream(std::uint64_t seed, long i) {
    // child i of the master stream, same derivation as split_streams
    return RngConfig{seed,
                     mix64((static_cast<std::uint64_t>(i) + 1) * 0x9e3779b97f4a7c15ULL)};
}

} // namespace covfk::detail
