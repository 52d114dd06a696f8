#include "ddpc/hankel.hpp"

#include <Eigen/SVD>

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace ddpc {

BlockHankel build_block_hankel(const std::vector<Vec>& w, int M)
{
    detail::require(M >= 1, "build_block_hankel: M must be >= 1");
    const auto N = static_cast<Index>(w.size());
    if (N < M) {
        std::ostringstream msg;
        msg << "build_block_hankel: sequence length " << N
            << " is shorter than the requested depth " << M;
        throw ContractError(msg.str());
    }
    const Index q = w.front().size();
    for (const Vec& s : w)
        detail::require(s.size() == q, "build_block_hankel: samples must share one dimension");

    BlockHankel h;
    h.q = static_cast<int>(q);
    h.M = M;
    h.data.resize(q * M, N - M + 1);
    for (Index j = 0; j + M <= N; ++j)
        for (int i = 0; i < M; ++i)
            h.data.block(i * q, j, q, 1) = w[static_cast<std::size_t>(i + j)];
    return h;
}

int numerical_rank(const Mat& A, double rank_tol)
{
    if (A.size() == 0)
        return 0;
    Eigen::JacobiSVD<Mat> svd(A);
    const Vec& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) <= 0.0)
        return 0;
    const double cutoff = rank_tol * sv(0);
    int rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff)
            ++rank;
    return rank;
}

bool is_persistently_exciting(const BlockHankel& h, double rank_tol)
{
    return numerical_rank(h.data, rank_tol) == h.q * h.M;
}

DataBlocks split_past_future(const std::vector<Vec>& u, const std::vector<Vec>& y,
                             int Np, int Nf)
{
    detail::require(Np >= 1 && Nf >= 1, "split_past_future: horizons must be >= 1");
    detail::require(u.size() == y.size(),
                    "split_past_future: input and output sequences must have equal length");
    const auto T = static_cast<Index>(u.size());
    if (T < Np + Nf) {
        std::ostringstream msg;
        msg << "split_past_future: trajectory length " << T
            << " is shorter than Np+Nf=" << Np + Nf;
        throw ContractError(msg.str());
    }

    const BlockHankel hu = build_block_hankel(u, Np + Nf);
    const BlockHankel hy = build_block_hankel(y, Np + Nf);

    DataBlocks b;
    b.m = hu.q;
    b.p = hy.q;
    b.Np = Np;
    b.Nf = Nf;
    b.L = hu.data.cols();
    b.Up = hu.data.topRows(static_cast<Index>(b.m) * Np);
    b.Uf = hu.data.bottomRows(static_cast<Index>(b.m) * Nf);
    b.Yp = hy.data.topRows(static_cast<Index>(b.p) * Np);
    b.Yf = hy.data.bottomRows(static_cast<Index>(b.p) * Nf);
    return b;
}

DataBlocks average_data_blocks(const std::vector<DataBlocks>& blocks)
{
    detail::require(!blocks.empty(), "average_data_blocks: need at least one member");
    const DataBlocks& first = blocks.front();
    for (std::size_t i = 1; i < blocks.size(); ++i) {
        const DataBlocks& b = blocks[i];
        const bool same_shape = b.m == first.m && b.p == first.p && b.Np == first.Np &&
                                b.Nf == first.Nf && b.L == first.L;
        if (!same_shape) {
            std::ostringstream msg;
            msg << "average_data_blocks: member " << i << " has mismatched shape";
            throw ContractError(msg.str());
        }
        // Averaging is only defined over datasets that were excited with the
        // identical input sequence, so the input blocks must agree exactly.
        if (b.Up != first.Up || b.Uf != first.Uf) {
            std::ostringstream msg;
            msg << "average_data_blocks: member " << i
                << " was collected under a different input sequence";
            throw ContractError(msg.str());
        }
    }

    DataBlocks avg = first;
    const double scale = 1.0 / static_cast<double>(blocks.size());
    Mat yp_sum = first.Yp;
    Mat yf_sum = first.Yf;
    for (std::size_t i = 1; i < blocks.size(); ++i) {
        yp_sum += blocks[i].Yp;
        yf_sum += blocks[i].Yf;
    }
    avg.Yp = scale * yp_sum;
    avg.Yf = scale * yf_sum;
    return avg;
}

namespace {

void write_matrix_rows(std::ostream& out, const Mat& M)
{
    for (Index i = 0; i < M.rows(); ++i) {
        for (Index j = 0; j < M.cols(); ++j) {
            if (j)
                out << ',';
            out << M(i, j);
        }
        out << '\n';
    }
}

Mat read_matrix_rows(std::istream& in, Index rows, Index cols, const char* what)
{
    Mat M(rows, cols);
    std::string line;
    for (Index i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) {
            std::ostringstream msg;
            msg << "load_data_blocks: truncated " << what << " block at row " << i;
            throw std::runtime_error(msg.str());
        }
        std::istringstream ls(line);
        std::string cell;
        for (Index j = 0; j < cols; ++j) {
            if (!std::getline(ls, cell, ',')) {
                std::ostringstream msg;
                msg << "load_data_blocks: row " << i << " of " << what
                    << " has fewer than " << cols << " columns";
                throw std::runtime_error(msg.str());
            }
            M(i, j) = std::stod(cell);
        }
    }
    return M;
}

} // namespace

void save_data_blocks(std::ostream& out, const DataBlocks& blocks)
{
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "m,p,Np,Nf,L\n";
    out << blocks.m << ',' << blocks.p << ',' << blocks.Np << ',' << blocks.Nf << ','
        << blocks.L << '\n';
    write_matrix_rows(out, blocks.Up);
    write_matrix_rows(out, blocks.Uf);
    write_matrix_rows(out, blocks.Yp);
    write_matrix_rows(out, blocks.Yf);
}

void save_data_blocks(const std::string& path, const DataBlocks& blocks)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("save_data_blocks: cannot open " + path + " for writing");
    save_data_blocks(out, blocks);
    if (!out)
        throw std::runtime_error("save_data_blocks: write to " + path + " failed");
}

DataBlocks load_data_blocks(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line.rfind("m,p,Np,Nf,L", 0) != 0)
        throw std::runtime_error("load_data_blocks: missing header line");
    if (!std::getline(in, line))
        throw std::runtime_error("load_data_blocks: missing dimension line");

    DataBlocks b;
    {
        std::istringstream ls(line);
        char sep = ',';
        long long L = 0;
        if (!(ls >> b.m >> sep >> b.p >> sep >> b.Np >> sep >> b.Nf >> sep >> L))
            throw std::runtime_error("load_data_blocks: malformed dimension line: " + line);
        b.L = static_cast<Index>(L);
    }
    detail::require(b.m >= 1 && b.p >= 1 && b.Np >= 1 && b.Nf >= 1 && b.L >= 1,
                    "load_data_blocks: dimensions must be positive");

    b.Up = read_matrix_rows(in, static_cast<Index>(b.m) * b.Np, b.L, "Up");
    b.Uf = read_matrix_rows(in, static_cast<Index>(b.m) * b.Nf, b.L, "Uf");
    b.Yp = read_matrix_rows(in, static_cast<Index>(b.p) * b.Np, b.L, "Yp");
    b.Yf = read_matrix_rows(in, static_cast<Index>(b.p) * b.Nf, b.L, "Yf");
    return b;
}

DataBlocks load_data_blocks(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("load_data_blocks: cannot open " + path);
    return load_data_blocks(in);
}

} // namespace ddpc
