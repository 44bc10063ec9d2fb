#include "mnde/ops.hpp"

#include "mnde/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mnde {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// C[m x p] += op(A) * op(B), all row-major.
void gemm_acc(const double* a, std::size_t a_rows, std::size_t a_cols, bool trans_a, const double* b,
              std::size_t b_rows, std::size_t b_cols, bool trans_b, double* c) {
    ConstMap A(a, static_cast<Eigen::Index>(a_rows), static_cast<Eigen::Index>(a_cols));
    ConstMap B(b, static_cast<Eigen::Index>(b_rows), static_cast<Eigen::Index>(b_cols));
    const auto m = trans_a ? a_cols : a_rows;
    const auto p = trans_b ? b_rows : b_cols;
    MutMap C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
    if (!trans_a && !trans_b)
        C.noalias() += A * B;
    else if (trans_a && !trans_b)
        C.noalias() += A.transpose() * B;
    else if (!trans_a && trans_b)
        C.noalias() += A * B.transpose();
    else
        C.noalias() += A.transpose() * B.transpose();
}

Tape& tape_of(const Var& v) {
    if (!v.valid()) throw DimensionError("operation on an unbound Var");
    return *v.tape();
}

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
    std::size_t n = 1;
    for (std::size_t i = begin; i < end; ++i) n *= s[i];
    return n;
}

Tensor make_tensor(const Shape& shape) {
    return shape.empty() ? Tensor::scalar(0.0) : Tensor(shape, 0.0);
}

struct Broadcast {
    Shape out;
    std::vector<std::size_t> sa, sb; // strides into a and b, 0 on broadcast axes
    bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
    Broadcast bc;
    if (a == b) {
        bc.out = a;
        bc.same = true;
        return bc;
    }
    if (a.size() != b.size())
        throw DimensionError("elementwise rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    const auto sta = strides_of(a), stb = strides_of(b);
    bc.out.resize(a.size());
    bc.sa.resize(a.size());
    bc.sb.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || a[i] == 1 || b[i] == 1) {
            bc.out[i] = std::max(a[i], b[i]);
            bc.sa[i] = a[i] == 1 ? 0 : sta[i];
            bc.sb[i] = b[i] == 1 ? 0 : stb[i];
        } else {
            throw DimensionError("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
        }
    }
    return bc;
}

// Calls fn(out_index, a_offset, b_offset) for every output element in row-major order.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
    const std::size_t total = shape_size(bc.out);
    if (bc.same) {
        for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
        return;
    }
    const std::size_t r = bc.out.size();
    const std::size_t inner = bc.out[r - 1];
    const std::size_t sa_in = bc.sa[r - 1], sb_in = bc.sb[r - 1];
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < total; i += inner) {
        for (std::size_t k = 0; k < inner; ++k) fn(i + k, ia + k * sa_in, ib + k * sb_in);
        // advance the outer multi-index
        for (std::size_t ax = r - 1; ax-- > 0;) {
            ++idx[ax];
            ia += bc.sa[ax];
            ib += bc.sb[ax];
            if (idx[ax] < bc.out[ax]) break;
            ia -= bc.sa[ax] * idx[ax];
            ib -= bc.sb[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

struct AxisSplit {
    std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    if (axis >= s.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return {prod(s, 0, axis), s[axis], prod(s, axis + 1, s.size())};
}

} // namespace

Var matmul(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    const Shape &sa = a.shape(), &sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw DimensionError("matmul shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
    const std::size_t m = sa[0], k = sa[1], p = sb[1];
    Tensor out({m, p}, 0.0);
    gemm_acc(a.value().data().data(), m, k, false, b.value().data().data(), k, p, false,
             out.data().data());
    const std::size_t ia = a.id(), ib = b.id();
    Var parts[] = {a, b};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self).data().data();
        if (tp.requires_grad(ia))
            gemm_acc(g, m, p, false, tp.value(ib).data().data(), k, p, true,
                     tp.grad_buffer(ia).data().data());
        if (tp.requires_grad(ib))
            gemm_acc(tp.value(ia).data().data(), m, k, true, g, m, p, false,
                     tp.grad_buffer(ib).data().data());
    });
}

Var bmm(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    const Shape &sa = a.shape(), &sb = b.shape();
    const bool shared = sa.size() == 2;
    if (!(sa.size() == 2 || sa.size() == 3) || sb.size() != 3)
        throw DimensionError("bmm expects [m,k] or [B,m,k] times [B,k,p], got " + shape_str(sa) + " x " +
                             shape_str(sb));
    const std::size_t batch = sb[0];
    const std::size_t m = shared ? sa[0] : sa[1];
    const std::size_t k = shared ? sa[1] : sa[2];
    const std::size_t p = sb[2];
    if (sb[1] != k || (!shared && sa[0] != batch))
        throw DimensionError("bmm shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
    Tensor out({batch, m, p}, 0.0);
    const double* av = a.value().data().data();
    const double* bv = b.value().data().data();
    for (std::size_t i = 0; i < batch; ++i)
        gemm_acc(av + (shared ? 0 : i * m * k), m, k, false, bv + i * k * p, k, p, false,
                 out.data().data() + i * m * p);
    const std::size_t ia = a.id(), ib = b.id();
    Var parts[] = {a, b};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const double* g = tp.out_grad(self).data().data();
        const double* A = tp.value(ia).data().data();
        const double* B = tp.value(ib).data().data();
        if (tp.requires_grad(ia)) {
            double* ga = tp.grad_buffer(ia).data().data();
            for (std::size_t i = 0; i < batch; ++i)
                gemm_acc(g + i * m * p, m, p, false, B + i * k * p, k, p, true, ga + (shared ? 0 : i * m * k));
        }
        if (tp.requires_grad(ib)) {
            double* gb = tp.grad_buffer(ib).data().data();
            for (std::size_t i = 0; i < batch; ++i)
                gemm_acc(A + (shared ? 0 : i * m * k), m, k, true, g + i * m * p, m, p, false, gb + i * k * p);
        }
    });
}

Var elementwise(const Var& a, const Var& b, Binary kind) {
    Tape& t = tape_of(a);
    Broadcast bc = plan_broadcast(a.shape(), b.shape());
    Tensor out = make_tensor(bc.out);
    const auto& av = a.value();
    const auto& bv = b.value();
    double* o = out.data().data();
    switch (kind) {
    case Binary::add:
        for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { o[i] = av[x] + bv[y]; });
        break;
    case Binary::sub:
        for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { o[i] = av[x] - bv[y]; });
        break;
    case Binary::mul:
        for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { o[i] = av[x] * bv[y]; });
        break;
    case Binary::div:
        for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) {
            if (bv[y] == 0.0) throw NumericError("division by zero in elementwise div");
            o[i] = av[x] / bv[y];
        });
        break;
    }
    const std::size_t ia = a.id(), ib = b.id();
    Var parts[] = {a, b};
    return t.record(std::move(out), parts, [=, bc = std::move(bc)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        const Tensor& A = tp.value(ia);
        const Tensor& B = tp.value(ib);
        const bool need_a = tp.requires_grad(ia), need_b = tp.requires_grad(ib);
        double* ga = need_a ? tp.grad_buffer(ia).data().data() : nullptr;
        double* gb = need_b ? tp.grad_buffer(ib).data().data() : nullptr;
        switch (kind) {
        case Binary::add:
        case Binary::sub: {
            const double sb = kind == Binary::add ? 1.0 : -1.0;
            if (ga) for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t) { ga[x] += g[i]; });
            if (gb) for_each_broadcast(bc, [&](std::size_t i, std::size_t, std::size_t y) { gb[y] += sb * g[i]; });
            break;
        }
        case Binary::mul:
            if (ga) for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { ga[x] += g[i] * B[y]; });
            if (gb) for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { gb[y] += g[i] * A[x]; });
            break;
        case Binary::div:
            if (ga) for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) { ga[x] += g[i] / B[y]; });
            if (gb)
                for_each_broadcast(bc, [&](std::size_t i, std::size_t x, std::size_t y) {
                    gb[y] -= g[i] * A[x] / (B[y] * B[y]);
                });
            break;
        }
    });
}

Var scale(const Var& a, double s) {
    Tape& t = tape_of(a);
    Tensor out = a.value();
    for (double& v : out.data()) v *= s;
    const std::size_t ia = a.id();
    Var parts[] = {a};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        Tensor& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var add_scalar(const Var& a, double s) {
    Tape& t = tape_of(a);
    Tensor out = a.value();
    for (double& v : out.data()) v += s;
    const std::size_t ia = a.id();
    Var parts[] = {a};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        Tensor& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
    if (terms.empty() || terms.size() != coeffs.size())
        throw DimensionError("lincomb needs matching non-empty term and coefficient lists");
    Tape& t = tape_of(terms[0]);
    Tensor out = make_tensor(terms[0].shape());
    for (std::size_t j = 0; j < terms.size(); ++j) {
        const Tensor& v = terms[j].value();
        if (v.shape() != out.shape())
            throw DimensionError("lincomb shape mismatch " + shape_str(v.shape()) + " vs " +
                                 shape_str(out.shape()));
        const double c = coeffs[j];
        for (std::size_t i = 0; i < v.size(); ++i) out[i] += c * v[i];
    }
    std::vector<std::size_t> ids;
    for (const Var& v : terms) ids.push_back(v.id());
    std::vector<double> cs(coeffs.begin(), coeffs.end());
    return t.record(std::move(out), terms, [ids = std::move(ids), cs = std::move(cs)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        for (std::size_t j = 0; j < ids.size(); ++j) {
            if (!tp.requires_grad(ids[j])) continue;
            Tensor& gj = tp.grad_buffer(ids[j]);
            for (std::size_t i = 0; i < g.size(); ++i) gj[i] += cs[j] * g[i];
        }
    });
}

Var activation(const Var& x, Activation kind) {
    Tape& t = tape_of(x);
    Tensor out = x.value();
    if (kind == Activation::relu)
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    else
        for (double& v : out.data()) v = std::tanh(v);
    const std::size_t ix = x.id();
    Var parts[] = {x};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        Tensor& gx = tp.grad_buffer(ix);
        if (kind == Activation::relu) {
            const Tensor& in = tp.value(ix);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (in[i] > 0.0) gx[i] += g[i];
        } else {
            const Tensor& y = tp.value(self);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        }
    });
}

Var softmax(const Var& x, std::size_t axis) {
    Tape& t = tape_of(x);
    const AxisSplit sp = split_at(x.shape(), axis);
    Tensor out = x.value();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            double* base = out.data().data() + o * sp.len * sp.inner + in;
            double mx = base[0];
            for (std::size_t k = 1; k < sp.len; ++k) mx = std::max(mx, base[k * sp.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < sp.len; ++k) {
                base[k * sp.inner] = std::exp(base[k * sp.inner] - mx);
                z += base[k * sp.inner];
            }
            for (std::size_t k = 0; k < sp.len; ++k) base[k * sp.inner] /= z;
        }
    const std::size_t ix = x.id();
    Var parts[] = {x};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        const Tensor& y = tp.value(self);
        Tensor& gx = tp.grad_buffer(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < sp.len; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
                for (std::size_t k = 0; k < sp.len; ++k) {
                    const std::size_t i = base + k * sp.inner;
                    gx[i] += y[i] * (g[i] - dot);
                }
            }
    });
}

Var transpose(const Var& x, const std::vector<std::size_t>& perm) {
    Tape& t = tape_of(x);
    const Shape& s = x.shape();
    const std::size_t r = s.size();
    if (perm.size() != r) throw DimensionError("transpose permutation rank mismatch");
    std::vector<bool> seen(r, false);
    for (std::size_t p : perm) {
        if (p >= r || seen[p]) throw DimensionError("invalid transpose permutation");
        seen[p] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
    const auto in_strides = strides_of(s);
    // offset into the input for each output position, shared by forward and backward
    std::vector<std::size_t> src(shape_size(s));
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t off = 0;
        for (std::size_t i = 0; i < src.size(); ++i) {
            src[i] = off;
            for (std::size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                off += in_strides[perm[ax]];
                if (idx[ax] < out_shape[ax]) break;
                off -= in_strides[perm[ax]] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
    Tensor out(out_shape, 0.0);
    const Tensor& in = x.value();
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = in[src[i]];
    const std::size_t ix = x.id();
    Var parts[] = {x};
    return t.record(std::move(out), parts, [=, src = std::move(src)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        Tensor& gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
    });
}

Var transpose(const Var& x) {
    const std::size_t r = x.shape().size();
    if (r < 2) throw DimensionError("transpose needs rank >= 2");
    std::vector<std::size_t> perm(r);
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[r - 1], perm[r - 2]);
    return transpose(x, perm);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat of an empty list");
    Tape& t = tape_of(parts[0]);
    const Shape& s0 = parts[0].shape();
    std::vector<std::size_t> lens;
    Shape out_shape = s0;
    out_shape.at(axis) = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw DimensionError("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw DimensionError("concat shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
        lens.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    const std::size_t outer = prod(s0, 0, axis), inner = prod(s0, axis + 1, s0.size());
    const std::size_t total_len = out_shape[axis];
    Tensor out(out_shape, 0.0);
    std::size_t offset = 0;
    for (std::size_t j = 0; j < parts.size(); ++j) {
        const Tensor& v = parts[j].value();
        const std::size_t block = lens[j] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(v.data().data() + o * block, block,
                        out.data().data() + o * total_len * inner + offset * inner);
        offset += lens[j];
    }
    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id());
    return t.record(std::move(out), parts, [=, ids = std::move(ids), lens = std::move(lens)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        std::size_t off = 0;
        for (std::size_t j = 0; j < ids.size(); ++j) {
            const std::size_t block = lens[j] * inner;
            if (tp.requires_grad(ids[j])) {
                Tensor& gj = tp.grad_buffer(ids[j]);
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = g.data().data() + o * total_len * inner + off * inner;
                    double* dst = gj.data().data() + o * block;
                    for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
                }
            }
            off += lens[j];
        }
    });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
    Tape& t = tape_of(x);
    const AxisSplit sp = split_at(x.shape(), axis);
    if (begin >= end || end > sp.len)
        throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for axis of extent " + std::to_string(sp.len));
    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    Tensor out(out_shape, 0.0);
    const std::size_t block = (end - begin) * sp.inner;
    const Tensor& in = x.value();
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(in.data().data() + o * sp.len * sp.inner + begin * sp.inner, block,
                    out.data().data() + o * block);
    const std::size_t ix = x.id();
    Var parts[] = {x};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        Tensor& gx = tp.grad_buffer(ix);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            double* dst = gx.data().data() + o * sp.len * sp.inner + begin * sp.inner;
            const double* src = g.data().data() + o * block;
            for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
        }
    });
}

namespace {

Var reduce_axis(const Var& x, std::size_t axis, double factor) {
    Tape& t = tape_of(x);
    const AxisSplit sp = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor out = make_tensor(out_shape);
    const Tensor& in = x.value();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.len; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out[o * sp.inner + i] += factor * in[(o * sp.len + k) * sp.inner + i];
    const std::size_t ix = x.id();
    Var parts[] = {x};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        Tensor& gx = tp.grad_buffer(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t k = 0; k < sp.len; ++k)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    gx[(o * sp.len + k) * sp.inner + i] += factor * g[o * sp.inner + i];
    });
}

Var reduce_all(const Var& x, double factor) {
    Tape& t = tape_of(x);
    const Tensor& in = x.value();
    double s = 0.0;
    for (double v : in.data()) s += v;
    const std::size_t ix = x.id();
    Var parts[] = {x};
    return t.record(Tensor::scalar(factor * s), parts, [=](Tape& tp, std::size_t self) {
        const double g = tp.out_grad(self)[0] * factor;
        for (double& v : tp.grad_buffer(ix).data()) v += g;
    });
}

} // namespace

Var reduce_sum(const Var& x, std::size_t axis) { return reduce_axis(x, axis, 1.0); }

Var reduce_mean(const Var& x, std::size_t axis) {
    return reduce_axis(x, axis, 1.0 / static_cast<double>(x.dim(axis)));
}

Var sum(const Var& x) { return reduce_all(x, 1.0); }

Var mean(const Var& x) { return reduce_all(x, 1.0 / static_cast<double>(x.value().size())); }

Var reshape(const Var& x, Shape shape) {
    Tape& t = tape_of(x);
    Tensor out = x.value().reshaped(std::move(shape));
    const std::size_t ix = x.id();
    Var parts[] = {x};
    return t.record(std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        Tensor& gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
    Tape& t = tape_of(x);
    if (x.shape().size() != 2) throw DimensionError("gather_rows expects a rank-2 tensor");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (rows.empty()) throw DimensionError("gather_rows with no indices");
    for (std::size_t r : rows)
        if (r >= n) throw DimensionError("gather_rows index " + std::to_string(r) + " out of range");
    Tensor out({rows.size(), c}, 0.0);
    const Tensor& in = x.value();
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(in.data().data() + rows[i] * c, c, out.data().data() + i * c);
    const std::size_t ix = x.id();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Var parts[] = {x};
    return t.record(std::move(out), parts, [=, idx = std::move(idx)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.out_grad(self);
        Tensor& gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t k = 0; k < c; ++k) gx[idx[i] * c + k] += g[i * c + k];
    });
}

Var huber(const Var& pred, const Var& target, double delta) {
    Tape& t = tape_of(pred);
    if (pred.shape() != target.shape())
        throw DimensionError("huber shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    if (!(delta > 0.0)) throw DimensionError("huber threshold must be positive");
    const Tensor& p = pred.value();
    const Tensor& y = target.value();
    const double inv_n = 1.0 / static_cast<double>(p.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double e = std::abs(p[i] - y[i]);
        total += e <= delta ? 0.5 * e * e : delta * e - 0.5 * delta * delta;
    }
    const std::size_t ip = pred.id(), iy = target.id();
    Var parts[] = {pred, target};
    return t.record(Tensor::scalar(total * inv_n), parts, [=](Tape& tp, std::size_t self) {
        const double g = tp.out_grad(self)[0] * inv_n;
        const Tensor& P = tp.value(ip);
        const Tensor& Y = tp.value(iy);
        double* gp = tp.requires_grad(ip) ? tp.grad_buffer(ip).data().data() : nullptr;
        double* gy = tp.requires_grad(iy) ? tp.grad_buffer(iy).data().data() : nullptr;
        for (std::size_t i = 0; i < P.size(); ++i) {
            const double d = std::clamp(P[i] - Y[i], -delta, delta) * g;
            if (gp) gp[i] += d;
            if (gy) gy[i] -= d;
        }
    });
}

double gradcheck(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw DimensionError("gradcheck step must be positive");
    Tensor analytic;
    {
        Tape tape;
        Var in = tape.input(x);
        Var loss = f(tape, in);
        tape.backward(loss);
        analytic = tape.grad(in);
    }
    auto eval = [&](const Tensor& point) {
        Tape tape;
        Var in = tape.input(point);
        return f(tape, in).value().item();
    };
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = eval(probe);
        probe[i] = orig - h;
        const double down = eval(probe);
        probe[i] = orig;
        const double fd = (up - down) / (2.0 * h);
        if (!std::isfinite(fd)) throw NumericError("non-finite finite difference in gradcheck");
        worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i])));
    }
    return worst;
}

} // namespace mnde
