#pragma once

#include "ddpc/types.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace ddpc {

/// Block-Hankel matrix of a vector-valued sequence.
///
/// For a sequence w_0, ..., w_{N-1} in R^q and a depth M, `data` is the
/// (q*M) x (N-M+1) matrix whose block (i, j) equals w_{i+j}. The column
/// count is always maximal for the given sequence.
struct BlockHankel {
    Mat data;
    int q = 0; ///< signal dimension
    int M = 0; ///< number of block rows
};

/// Builds the depth-M block-Hankel matrix of `w`. Requires |w| >= M >= 1 and
/// all samples of equal dimension.
BlockHankel build_block_hankel(const std::vector<Vec>& w, int M);

/// Numerical rank of `A`: the number of singular values exceeding
/// rank_tol times the largest one. Returns 0 for an all-zero matrix.
int numerical_rank(const Mat& A, double rank_tol = 1e-9);

/// True iff `h.data` has full row rank q*M, i.e. the generating sequence is
/// persistently exciting of order M. Rank is decided by SVD with a relative
/// threshold.
bool is_persistently_exciting(const BlockHankel& h, double rank_tol = 1e-9);

/// Past/future partition of the input and output Hankel matrices used by the
/// data-driven controller. Stacking col(Up, Uf) reproduces H_{Np+Nf}(u) and
/// col(Yp, Yf) reproduces H_{Np+Nf}(y).
struct DataBlocks {
    Mat Up; ///< (m*Np) x L
    Mat Uf; ///< (m*Nf) x L
    Mat Yp; ///< (p*Np) x L
    Mat Yf; ///< (p*Nf) x L
    int m = 0;
    int p = 0;
    int Np = 0;
    int Nf = 0;
    Index L = 0; ///< shared column count
};

/// Splits trajectory data of length T into past/future blocks with horizons
/// Np and Nf. Requires T >= Np + Nf; the result has L = T - Np - Nf + 1
/// columns.
DataBlocks split_past_future(const std::vector<Vec>& u, const std::vector<Vec>& y,
                             int Np, int Nf);

/// Elementwise mean of N same-shaped DataBlocks collected under one shared
/// input sequence. The input blocks must agree bitwise across members (this
/// is verified, and a mismatch is an error); they are copied from the first
/// member so no rounding enters the deterministic part. Only Yp and Yf are
/// actually averaged.
DataBlocks average_data_blocks(const std::vector<DataBlocks>& blocks);

/// Serialization of DataBlocks to a small CSV container (header row with
/// m, p, Np, Nf, L followed by the four blocks in row-major order). Used to
/// build averaged matrices offline and reload them later.
void save_data_blocks(std::ostream& out, const DataBlocks& blocks);
void save_data_blocks(const std::string& path, const DataBlocks& blocks);
DataBlocks load_data_blocks(std::istream& in);
DataBlocks load_data_blocks(const std::string& path);

} // namespace ddpc
