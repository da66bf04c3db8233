#include "ceph3d/nn.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ceph3d/errors.hpp"

namespace ceph3d::nn {

namespace {

// ---- Shape helpers -----------------------------------------------------------

struct ConvDims {
    std::int64_t N, Cin, D, H, W;
    std::int64_t Cout, k, stride, groups;
    std::int64_t Do, Ho, Wo;
    std::int64_t CiG, CoG;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int groups) {
    if (x.shape.size() != 5) throw shape_error("conv3d input must be rank 5 (N,C,D,H,W)");
    if (w.shape.size() != 5) throw shape_error("conv3d weight must be rank 5 (Cout,Cin/g,k,k,k)");
    ConvDims d;
    d.N = x.shape[0];
    d.Cin = x.shape[1];
    d.D = x.shape[2];
    d.H = x.shape[3];
    d.W = x.shape[4];
    d.Cout = w.shape[0];
    d.k = w.shape[2];
    d.stride = stride;
    d.groups = groups;
    if (d.k != 1 && d.k != 3) throw shape_error("conv3d supports kernel sizes 1 and 3");
    if (w.shape[3] != d.k || w.shape[4] != d.k) throw shape_error("conv3d kernel must be cubic");
    if (d.Cin % groups != 0 || d.Cout % groups != 0)
        throw shape_error("conv3d channels must divide the group count");
    d.CiG = d.Cin / groups;
    d.CoG = d.Cout / groups;
    if (w.shape[1] != d.CiG) throw shape_error("conv3d weight Cin/groups mismatch");
    const std::int64_t pad = d.k / 2;
    d.Do = (d.D + 2 * pad - d.k) / stride + 1;
    d.Ho = (d.H + 2 * pad - d.k) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.k) / stride + 1;
    return d;
}

// ---- Convolution kernels -------------------------------------------------------
// All kernels walk output z planes in the outer loop so the plane under
// accumulation stays cache-resident while input planes stream past.

void conv3_fwd_s1(const ConvDims& cd, const double* x, const double* w, double* out) {
    const std::int64_t HW = cd.H * cd.W, DHW = cd.D * HW;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t z = 0; z < cd.D; ++z) {
            for (std::int64_t g = 0; g < cd.groups; ++g) {
                for (std::int64_t col = 0; col < cd.CoG; ++col) {
                    const std::int64_t co = g * cd.CoG + col;
                    double* op = out + ((n * cd.Cout + co) * cd.D + z) * HW;
                    for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                        const std::int64_t ci = g * cd.CiG + cil;
                        const double* inc = x + (n * cd.Cin + ci) * DHW;
                        const double* w27 = w + (co * cd.CiG + cil) * 27;
                        for (std::int64_t dz = 0; dz < 3; ++dz) {
                            const std::int64_t zi = z + dz - 1;
                            if (zi < 0 || zi >= cd.D) continue;
                            const double* ipl = inc + zi * HW;
                            for (std::int64_t dy = 0; dy < 3; ++dy) {
                                const std::int64_t y0 = std::max<std::int64_t>(0, 1 - dy);
                                const std::int64_t y1 = cd.H - 1 - std::max<std::int64_t>(0, dy - 1);
                                for (std::int64_t dx = 0; dx < 3; ++dx) {
                                    const double wv = w27[(dz * 3 + dy) * 3 + dx];
                                    const std::int64_t x0 = std::max<std::int64_t>(0, 1 - dx);
                                    const std::int64_t x1 = cd.W - 1 - std::max<std::int64_t>(0, dx - 1);
                                    for (std::int64_t y = y0; y <= y1; ++y) {
                                        const double* ip = ipl + (y + dy - 1) * cd.W + (dx - 1);
                                        double* orow = op + y * cd.W;
                                        for (std::int64_t xx = x0; xx <= x1; ++xx)
                                            orow[xx] += wv * ip[xx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3_fwd_s2(const ConvDims& cd, const double* x, const double* w, double* out) {
    const std::int64_t HW = cd.H * cd.W, DHW = cd.D * HW;
    const std::int64_t HWo = cd.Ho * cd.Wo;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t oz = 0; oz < cd.Do; ++oz) {
            for (std::int64_t g = 0; g < cd.groups; ++g) {
                for (std::int64_t col = 0; col < cd.CoG; ++col) {
                    const std::int64_t co = g * cd.CoG + col;
                    double* op = out + ((n * cd.Cout + co) * cd.Do + oz) * HWo;
                    for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                        const std::int64_t ci = g * cd.CiG + cil;
                        const double* inc = x + (n * cd.Cin + ci) * DHW;
                        const double* w27 = w + (co * cd.CiG + cil) * 27;
                        for (std::int64_t dz = 0; dz < 3; ++dz) {
                            const std::int64_t zi = 2 * oz + dz - 1;
                            if (zi < 0 || zi >= cd.D) continue;
                            const double* ipl = inc + zi * HW;
                            for (std::int64_t dy = 0; dy < 3; ++dy) {
                                const std::int64_t oy0 = (dy == 0) ? 1 : 0;
                                for (std::int64_t dx = 0; dx < 3; ++dx) {
                                    const double wv = w27[(dz * 3 + dy) * 3 + dx];
                                    const std::int64_t ox0 = (dx == 0) ? 1 : 0;
                                    for (std::int64_t oy = oy0; oy < cd.Ho; ++oy) {
                                        const double* ip = ipl + (2 * oy + dy - 1) * cd.W + (dx - 1);
                                        double* orow = op + oy * cd.Wo;
                                        for (std::int64_t ox = ox0; ox < cd.Wo; ++ox)
                                            orow[ox] += wv * ip[2 * ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv1_fwd(const ConvDims& cd, const double* x, const double* w, double* out) {
    const std::int64_t HW = cd.H * cd.W, DHW = cd.D * HW;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t z = 0; z < cd.D; ++z) {
            for (std::int64_t g = 0; g < cd.groups; ++g) {
                for (std::int64_t col = 0; col < cd.CoG; ++col) {
                    const std::int64_t co = g * cd.CoG + col;
                    double* op = out + ((n * cd.Cout + co) * cd.D + z) * HW;
                    for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                        const std::int64_t ci = g * cd.CiG + cil;
                        const double* ip = x + ((n * cd.Cin + ci) * cd.D + z) * HW;
                        const double wv = w[co * cd.CiG + cil];
                        for (std::int64_t p = 0; p < HW; ++p) op[p] += wv * ip[p];
                    }
                }
            }
        }
    }
}

void conv3_bwd_input_s1(const ConvDims& cd, const double* gout, const double* w, double* gin) {
    const std::int64_t HW = cd.H * cd.W, DHW = cd.D * HW;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t z = 0; z < cd.D; ++z) {
            for (std::int64_t g = 0; g < cd.groups; ++g) {
                for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                    const std::int64_t ci = g * cd.CiG + cil;
                    double* gp = gin + ((n * cd.Cin + ci) * cd.D + z) * HW;
                    for (std::int64_t col = 0; col < cd.CoG; ++col) {
                        const std::int64_t co = g * cd.CoG + col;
                        const double* goc = gout + (n * cd.Cout + co) * DHW;
                        const double* w27 = w + (co * cd.CiG + cil) * 27;
                        for (std::int64_t dz = 0; dz < 3; ++dz) {
                            // output plane that consumed input plane z via dz
                            const std::int64_t zo = z + 1 - dz;
                            if (zo < 0 || zo >= cd.D) continue;
                            const double* gpl = goc + zo * HW;
                            for (std::int64_t dy = 0; dy < 3; ++dy) {
                                const std::int64_t y0 = std::max<std::int64_t>(0, dy - 1);
                                const std::int64_t y1 = cd.H - 1 - std::max<std::int64_t>(0, 1 - dy);
                                for (std::int64_t dx = 0; dx < 3; ++dx) {
                                    const double wv = w27[(dz * 3 + dy) * 3 + dx];
                                    const std::int64_t x0 = std::max<std::int64_t>(0, dx - 1);
                                    const std::int64_t x1 = cd.W - 1 - std::max<std::int64_t>(0, 1 - dx);
                                    for (std::int64_t y = y0; y <= y1; ++y) {
                                        const double* gr = gpl + (y + 1 - dy) * cd.W + (1 - dx);
                                        double* grow = gp + y * cd.W;
                                        for (std::int64_t xx = x0; xx <= x1; ++xx)
                                            grow[xx] += wv * gr[xx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3_bwd_input_s2(const ConvDims& cd, const double* gout, const double* w, double* gin) {
    const std::int64_t HW = cd.H * cd.W, DHW = cd.D * HW;
    const std::int64_t HWo = cd.Ho * cd.Wo;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t g = 0; g < cd.groups; ++g) {
            for (std::int64_t col = 0; col < cd.CoG; ++col) {
                const std::int64_t co = g * cd.CoG + col;
                const double* goc = gout + (n * cd.Cout + co) * cd.Do * HWo;
                for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                    const std::int64_t ci = g * cd.CiG + cil;
                    double* gic = gin + (n * cd.Cin + ci) * DHW;
                    const double* w27 = w + (co * cd.CiG + cil) * 27;
                    for (std::int64_t dz = 0; dz < 3; ++dz)
                        for (std::int64_t dy = 0; dy < 3; ++dy)
                            for (std::int64_t dx = 0; dx < 3; ++dx) {
                                const double wv = w27[(dz * 3 + dy) * 3 + dx];
                                const std::int64_t oz0 = (dz == 0) ? 1 : 0;
                                const std::int64_t oy0 = (dy == 0) ? 1 : 0;
                                const std::int64_t ox0 = (dx == 0) ? 1 : 0;
                                for (std::int64_t oz = oz0; oz < cd.Do; ++oz) {
                                    double* gpl = gic + (2 * oz + dz - 1) * HW;
                                    const double* gol = goc + oz * HWo;
                                    for (std::int64_t oy = oy0; oy < cd.Ho; ++oy) {
                                        double* grow = gpl + (2 * oy + dy - 1) * cd.W + (dx - 1);
                                        const double* gorow = gol + oy * cd.Wo;
                                        for (std::int64_t ox = ox0; ox < cd.Wo; ++ox)
                                            grow[2 * ox] += wv * gorow[ox];
                                    }
                                }
                            }
                }
            }
        }
    }
}

void conv1_bwd_input(const ConvDims& cd, const double* gout, const double* w, double* gin) {
    const std::int64_t HW = cd.H * cd.W;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t z = 0; z < cd.D; ++z) {
            for (std::int64_t g = 0; g < cd.groups; ++g) {
                for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                    const std::int64_t ci = g * cd.CiG + cil;
                    double* gp = gin + ((n * cd.Cin + ci) * cd.D + z) * HW;
                    for (std::int64_t col = 0; col < cd.CoG; ++col) {
                        const std::int64_t co = g * cd.CoG + col;
                        const double* gop = gout + ((n * cd.Cout + co) * cd.D + z) * HW;
                        const double wv = w[co * cd.CiG + cil];
                        for (std::int64_t p = 0; p < HW; ++p) gp[p] += wv * gop[p];
                    }
                }
            }
        }
    }
}

void conv3_bwd_weight_s1(const ConvDims& cd, const double* gout, const double* x,
                         double* gw, double* gb) {
    const std::int64_t HW = cd.H * cd.W, DHW = cd.D * HW;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t z = 0; z < cd.D; ++z) {
            for (std::int64_t g = 0; g < cd.groups; ++g) {
                for (std::int64_t col = 0; col < cd.CoG; ++col) {
                    const std::int64_t co = g * cd.CoG + col;
                    const double* gop = gout + ((n * cd.Cout + co) * cd.D + z) * HW;
                    double bacc = 0.0;
#pragma omp simd reduction(+ : bacc)
                    for (std::int64_t p = 0; p < HW; ++p) bacc += gop[p];
                    gb[co] += bacc;
                    for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                        const std::int64_t ci = g * cd.CiG + cil;
                        const double* inc = x + (n * cd.Cin + ci) * DHW;
                        double* gw27 = gw + (co * cd.CiG + cil) * 27;
                        for (std::int64_t dz = 0; dz < 3; ++dz) {
                            const std::int64_t zi = z + dz - 1;
                            if (zi < 0 || zi >= cd.D) continue;
                            const double* ipl = inc + zi * HW;
                            for (std::int64_t dy = 0; dy < 3; ++dy) {
                                const std::int64_t y0 = std::max<std::int64_t>(0, 1 - dy);
                                const std::int64_t y1 = cd.H - 1 - std::max<std::int64_t>(0, dy - 1);
                                for (std::int64_t dx = 0; dx < 3; ++dx) {
                                    const std::int64_t x0 = std::max<std::int64_t>(0, 1 - dx);
                                    const std::int64_t x1 = cd.W - 1 - std::max<std::int64_t>(0, dx - 1);
                                    double acc = 0.0;
                                    for (std::int64_t y = y0; y <= y1; ++y) {
                                        const double* ip = ipl + (y + dy - 1) * cd.W + (dx - 1);
                                        const double* gr = gop + y * cd.W;
#pragma omp simd reduction(+ : acc)
                                        for (std::int64_t xx = x0; xx <= x1; ++xx)
                                            acc += gr[xx] * ip[xx];
                                    }
                                    gw27[(dz * 3 + dy) * 3 + dx] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3_bwd_weight_s2(const ConvDims& cd, const double* gout, const double* x,
                         double* gw, double* gb) {
    const std::int64_t HW = cd.H * cd.W, DHW = cd.D * HW;
    const std::int64_t HWo = cd.Ho * cd.Wo;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t oz = 0; oz < cd.Do; ++oz) {
            for (std::int64_t g = 0; g < cd.groups; ++g) {
                for (std::int64_t col = 0; col < cd.CoG; ++col) {
                    const std::int64_t co = g * cd.CoG + col;
                    const double* gop = gout + ((n * cd.Cout + co) * cd.Do + oz) * HWo;
                    double bacc = 0.0;
#pragma omp simd reduction(+ : bacc)
                    for (std::int64_t p = 0; p < HWo; ++p) bacc += gop[p];
                    gb[co] += bacc;
                    for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                        const std::int64_t ci = g * cd.CiG + cil;
                        const double* inc = x + (n * cd.Cin + ci) * DHW;
                        double* gw27 = gw + (co * cd.CiG + cil) * 27;
                        for (std::int64_t dz = 0; dz < 3; ++dz) {
                            const std::int64_t zi = 2 * oz + dz - 1;
                            if (zi < 0 || zi >= cd.D) continue;
                            const double* ipl = inc + zi * HW;
                            for (std::int64_t dy = 0; dy < 3; ++dy) {
                                const std::int64_t oy0 = (dy == 0) ? 1 : 0;
                                for (std::int64_t dx = 0; dx < 3; ++dx) {
                                    const std::int64_t ox0 = (dx == 0) ? 1 : 0;
                                    double acc = 0.0;
                                    for (std::int64_t oy = oy0; oy < cd.Ho; ++oy) {
                                        const double* ip = ipl + (2 * oy + dy - 1) * cd.W + (dx - 1);
                                        const double* gr = gop + oy * cd.Wo;
#pragma omp simd reduction(+ : acc)
                                        for (std::int64_t ox = ox0; ox < cd.Wo; ++ox)
                                            acc += gr[ox] * ip[2 * ox];
                                    }
                                    gw27[(dz * 3 + dy) * 3 + dx] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv1_bwd_weight(const ConvDims& cd, const double* gout, const double* x,
                      double* gw, double* gb) {
    const std::int64_t HW = cd.H * cd.W;
    for (std::int64_t n = 0; n < cd.N; ++n) {
        for (std::int64_t z = 0; z < cd.D; ++z) {
            for (std::int64_t g = 0; g < cd.groups; ++g) {
                for (std::int64_t col = 0; col < cd.CoG; ++col) {
                    const std::int64_t co = g * cd.CoG + col;
                    const double* gop = gout + ((n * cd.Cout + co) * cd.D + z) * HW;
                    double bacc = 0.0;
#pragma omp simd reduction(+ : bacc)
                    for (std::int64_t p = 0; p < HW; ++p) bacc += gop[p];
                    gb[co] += bacc;
                    for (std::int64_t cil = 0; cil < cd.CiG; ++cil) {
                        const std::int64_t ci = g * cd.CiG + cil;
                        const double* ip = x + ((n * cd.Cin + ci) * cd.D + z) * HW;
                        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                        for (std::int64_t p = 0; p < HW; ++p) acc += gop[p] * ip[p];
                        gw[co * cd.CiG + cil] += acc;
                    }
                }
            }
        }
    }
}

} // namespace

// ---- Graph plumbing -----------------------------------------------------------

Var make_input(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

Var make_param(Tensor value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

} // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int groups) {
    const ConvDims cd = conv_dims(x->value, w->value, stride, groups);
    if (b->value.numel() != cd.Cout) throw shape_error("conv3d bias length must equal Cout");
    if (stride != 1 && stride != 2) throw shape_error("conv3d supports strides 1 and 2");
    if (cd.k == 1 && stride != 1) throw shape_error("1x1x1 conv is only used with stride 1");

    Tensor out({cd.N, cd.Cout, cd.Do, cd.Ho, cd.Wo});
    // broadcast bias
    const std::int64_t HWD = cd.Do * cd.Ho * cd.Wo;
    for (std::int64_t n = 0; n < cd.N; ++n)
        for (std::int64_t co = 0; co < cd.Cout; ++co)
            std::fill_n(out.data() + (n * cd.Cout + co) * HWD, HWD, b->value.v[static_cast<std::size_t>(co)]);

    if (cd.k == 3 && stride == 1)
        conv3_fwd_s1(cd, x->value.data(), w->value.data(), out.data());
    else if (cd.k == 3)
        conv3_fwd_s2(cd, x->value.data(), w->value.data(), out.data());
    else
        conv1_fwd(cd, x->value.data(), w->value.data(), out.data());

    return make_op(std::move(out), {x, w, b}, [cd](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        const double* gout = self.grad.data();
        if (xn.requires_grad) {
            xn.ensure_grad();
            if (cd.k == 3 && cd.stride == 1)
                conv3_bwd_input_s1(cd, gout, wn.value.data(), xn.grad.data());
            else if (cd.k == 3)
                conv3_bwd_input_s2(cd, gout, wn.value.data(), xn.grad.data());
            else
                conv1_bwd_input(cd, gout, wn.value.data(), xn.grad.data());
        }
        if (wn.requires_grad || bn.requires_grad) {
            wn.ensure_grad();
            bn.ensure_grad();
            if (cd.k == 3 && cd.stride == 1)
                conv3_bwd_weight_s1(cd, gout, xn.value.data(), wn.grad.data(), bn.grad.data());
            else if (cd.k == 3)
                conv3_bwd_weight_s2(cd, gout, xn.value.data(), wn.grad.data(), bn.grad.data());
            else
                conv1_bwd_weight(cd, gout, xn.value.data(), wn.grad.data(), bn.grad.data());
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x->value.shape.size() != 2 || w->value.shape.size() != 2)
        throw shape_error("linear expects (N,F) input and (O,F) weight");
    const std::int64_t N = x->value.shape[0], F = x->value.shape[1], O = w->value.shape[0];
    if (w->value.shape[1] != F || b->value.numel() != O)
        throw shape_error("linear weight/bias shapes inconsistent with input");

    Tensor out({N, O});
    for (std::int64_t n = 0; n < N; ++n) {
        const double* xi = x->value.data() + n * F;
        for (std::int64_t o = 0; o < O; ++o) {
            const double* wo = w->value.data() + o * F;
            double acc = b->value.v[static_cast<std::size_t>(o)];
#pragma omp simd reduction(+ : acc)
            for (std::int64_t f = 0; f < F; ++f) acc += wo[f] * xi[f];
            out.v[static_cast<std::size_t>(n * O + o)] = acc;
        }
    }
    return make_op(std::move(out), {x, w, b}, [N, F, O](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        const double* g = self.grad.data();
        if (xn.requires_grad) {
            xn.ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t o = 0; o < O; ++o) {
                    const double gv = g[n * O + o];
                    const double* wo = wn.value.data() + o * F;
                    double* gx = xn.grad.data() + n * F;
                    for (std::int64_t f = 0; f < F; ++f) gx[f] += gv * wo[f];
                }
        }
        if (wn.requires_grad) {
            wn.ensure_grad();
            bn.ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t o = 0; o < O; ++o) {
                    const double gv = g[n * O + o];
                    const double* xi = xn.value.data() + n * F;
                    double* gw = wn.grad.data() + o * F;
                    for (std::int64_t f = 0; f < F; ++f) gw[f] += gv * xi[f];
                    bn.grad.v[static_cast<std::size_t>(o)] += gv;
                }
        }
    });
}

Var relu(const Var& x) {
    Tensor out(x->value.shape);
    const std::int64_t n = x->value.numel();
    for (std::int64_t p = 0; p < n; ++p) out.v[p] = x->value.v[p] > 0.0 ? x->value.v[p] : 0.0;
    return make_op(std::move(out), {x}, [n](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::int64_t p = 0; p < n; ++p)
            if (xn.value.v[p] > 0.0) xn.grad.v[p] += self.grad.v[p];
    });
}

Var sigmoid(const Var& x) {
    Tensor out(x->value.shape);
    const std::int64_t n = x->value.numel();
    for (std::int64_t p = 0; p < n; ++p) out.v[p] = 1.0 / (1.0 + std::exp(-x->value.v[p]));
    return make_op(std::move(out), {x}, [n](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::int64_t p = 0; p < n; ++p) {
            const double s = self.value.v[p];
            xn.grad.v[p] += self.grad.v[p] * s * (1.0 - s);
        }
    });
}

Var add(const Var& a, const Var& b) {
    if (a->value.shape != b->value.shape) throw shape_error("add expects identical shapes");
    Tensor out(a->value.shape);
    const std::int64_t n = out.numel();
    for (std::int64_t p = 0; p < n; ++p) out.v[p] = a->value.v[p] + b->value.v[p];
    return make_op(std::move(out), {a, b}, [n](Node& self) {
        for (int side = 0; side < 2; ++side) {
            Node& pn = *self.parents[side];
            if (!pn.requires_grad) continue;
            pn.ensure_grad();
            for (std::int64_t p = 0; p < n; ++p) pn.grad.v[p] += self.grad.v[p];
        }
    });
}

Var scale(const Var& x, double c) {
    Tensor out(x->value.shape);
    const std::int64_t n = out.numel();
    for (std::int64_t p = 0; p < n; ++p) out.v[p] = c * x->value.v[p];
    return make_op(std::move(out), {x}, [n, c](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::int64_t p = 0; p < n; ++p) xn.grad.v[p] += c * self.grad.v[p];
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    if (x->value.shape.size() != 5) throw shape_error("group_norm expects (N,C,D,H,W)");
    const std::int64_t N = x->value.shape[0], C = x->value.shape[1];
    const std::int64_t S = x->value.shape[2] * x->value.shape[3] * x->value.shape[4];
    if (C % groups != 0) throw shape_error("group_norm channel count must divide groups");
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw shape_error("group_norm affine parameters must have C elements");
    const std::int64_t CG = C / groups;
    const std::int64_t m = CG * S;

    Tensor out(x->value.shape);
    // saved statistics per (n, group) for the backward pass
    auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N * groups));
    auto istd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N * groups));

    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t g = 0; g < groups; ++g) {
            const double* xp = x->value.data() + (n * C + g * CG) * S;
            double mu = 0.0;
#pragma omp simd reduction(+ : mu)
            for (std::int64_t p = 0; p < m; ++p) mu += xp[p];
            mu /= static_cast<double>(m);
            double var = 0.0;
#pragma omp simd reduction(+ : var)
            for (std::int64_t p = 0; p < m; ++p) {
                const double d = xp[p] - mu;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double is = 1.0 / std::sqrt(var + eps);
            (*mean)[static_cast<std::size_t>(n * groups + g)] = mu;
            (*istd)[static_cast<std::size_t>(n * groups + g)] = is;

            for (std::int64_t cl = 0; cl < CG; ++cl) {
                const std::int64_t c = g * CG + cl;
                const double ga = gamma->value.v[static_cast<std::size_t>(c)];
                const double be = beta->value.v[static_cast<std::size_t>(c)];
                const double* xi = x->value.data() + (n * C + c) * S;
                double* oi = out.data() + (n * C + c) * S;
                for (std::int64_t p = 0; p < S; ++p) oi[p] = ga * ((xi[p] - mu) * is) + be;
            }
        }
    }

    const std::int64_t Ncap = N, Ccap = C, Scap = S, CGcap = CG;
    const int Gcap = groups;
    return make_op(std::move(out), {x, gamma, beta}, [=](Node& self) {
        Node& xn = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& bn = *self.parents[2];
        const double* g = self.grad.data();
        const bool need_x = xn.requires_grad;
        if (gn.requires_grad) {
            gn.ensure_grad();
            bn.ensure_grad();
        }
        if (need_x) xn.ensure_grad();

        for (std::int64_t n = 0; n < Ncap; ++n) {
            for (std::int64_t gg = 0; gg < Gcap; ++gg) {
                const double mu = (*mean)[static_cast<std::size_t>(n * Gcap + gg)];
                const double is = (*istd)[static_cast<std::size_t>(n * Gcap + gg)];
                const std::int64_t mcnt = CGcap * Scap;

                // per-channel affine grads + group-wide sums for dx
                double s1 = 0.0, s2 = 0.0;
                for (std::int64_t cl = 0; cl < CGcap; ++cl) {
                    const std::int64_t c = gg * CGcap + cl;
                    const double ga = gn.value.v[static_cast<std::size_t>(c)];
                    const double* xi = xn.value.data() + (n * Ccap + c) * Scap;
                    const double* gi = g + (n * Ccap + c) * Scap;
                    double dg = 0.0, db = 0.0, a1 = 0.0, a2 = 0.0;
#pragma omp simd reduction(+ : dg, db, a1, a2)
                    for (std::int64_t p = 0; p < Scap; ++p) {
                        const double xh = (xi[p] - mu) * is;
                        dg += gi[p] * xh;
                        db += gi[p];
                        a1 += gi[p] * ga;
                        a2 += gi[p] * ga * xh;
                    }
                    if (gn.requires_grad) {
                        gn.grad.v[static_cast<std::size_t>(c)] += dg;
                        bn.grad.v[static_cast<std::size_t>(c)] += db;
                    }
                    s1 += a1;
                    s2 += a2;
                }
                if (!need_x) continue;
                const double inv_m = 1.0 / static_cast<double>(mcnt);
                for (std::int64_t cl = 0; cl < CGcap; ++cl) {
                    const std::int64_t c = gg * CGcap + cl;
                    const double ga = gn.value.v[static_cast<std::size_t>(c)];
                    const double* xi = xn.value.data() + (n * Ccap + c) * Scap;
                    const double* gi = g + (n * Ccap + c) * Scap;
                    double* gx = xn.grad.data() + (n * Ccap + c) * Scap;
                    for (std::int64_t p = 0; p < Scap; ++p) {
                        const double xh = (xi[p] - mu) * is;
                        gx[p] += is * (gi[p] * ga - s1 * inv_m - xh * s2 * inv_m);
                    }
                }
            }
        }
    });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    return group_norm(x, gamma, beta, static_cast<int>(x->value.shape[1]), eps);
}

Var global_avg_pool(const Var& x) {
    if (x->value.shape.size() != 5) throw shape_error("global_avg_pool expects (N,C,D,H,W)");
    const std::int64_t N = x->value.shape[0], C = x->value.shape[1];
    const std::int64_t S = x->value.shape[2] * x->value.shape[3] * x->value.shape[4];
    Tensor out({N, C});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const double* xi = x->value.data() + (n * C + c) * S;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (std::int64_t p = 0; p < S; ++p) acc += xi[p];
            out.v[static_cast<std::size_t>(n * C + c)] = acc / static_cast<double>(S);
        }
    return make_op(std::move(out), {x}, [N, C, S](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        const double inv = 1.0 / static_cast<double>(S);
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const double gv = self.grad.v[static_cast<std::size_t>(n * C + c)] * inv;
                double* gx = xn.grad.data() + (n * C + c) * S;
                for (std::int64_t p = 0; p < S; ++p) gx[p] += gv;
            }
    });
}

Var upsample_nearest2(const Var& x) {
    if (x->value.shape.size() != 5) throw shape_error("upsample_nearest2 expects (N,C,D,H,W)");
    const std::int64_t N = x->value.shape[0], C = x->value.shape[1];
    const std::int64_t D = x->value.shape[2], H = x->value.shape[3], W = x->value.shape[4];
    Tensor out({N, C, 2 * D, 2 * H, 2 * W});
    const std::int64_t HW = H * W, HW2 = 4 * HW;
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const double* xi = x->value.data() + nc * D * HW;
        double* oi = out.data() + nc * 8 * D * HW;
        for (std::int64_t z = 0; z < 2 * D; ++z) {
            const double* pl = xi + (z >> 1) * HW;
            double* ol = oi + z * HW2;
            for (std::int64_t y = 0; y < 2 * H; ++y) {
                const double* row = pl + (y >> 1) * W;
                double* orow = ol + y * 2 * W;
                for (std::int64_t xx = 0; xx < W; ++xx) {
                    orow[2 * xx] = row[xx];
                    orow[2 * xx + 1] = row[xx];
                }
            }
        }
    }
    return make_op(std::move(out), {x}, [N, C, D, H, W](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        const std::int64_t HW = H * W, HW2 = 4 * HW;
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            double* gx = xn.grad.data() + nc * D * HW;
            const double* go = self.grad.data() + nc * 8 * D * HW;
            for (std::int64_t z = 0; z < 2 * D; ++z) {
                double* gpl = gx + (z >> 1) * HW;
                const double* gol = go + z * HW2;
                for (std::int64_t y = 0; y < 2 * H; ++y) {
                    double* grow = gpl + (y >> 1) * W;
                    const double* gorow = gol + y * 2 * W;
                    for (std::int64_t xx = 0; xx < W; ++xx)
                        grow[xx] += gorow[2 * xx] + gorow[2 * xx + 1];
                }
            }
        }
    });
}

Var reshape(const Var& x, std::vector<std::int64_t> shape) {
    if (Tensor::numel_of(shape) != x->value.numel())
        throw shape_error("reshape must preserve element count");
    Tensor out;
    out.shape = std::move(shape);
    out.v = x->value.v;
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::int64_t p = 0; p < xn.value.numel(); ++p) xn.grad.v[p] += self.grad.v[p];
    });
}

std::vector<double> dsnt_rectified_mass(const Tensor& x) {
    if (x.shape.size() != 5) throw shape_error("dsnt expects (N,L,D,H,W)");
    const std::int64_t NL = x.shape[0] * x.shape[1];
    const std::int64_t S = x.shape[2] * x.shape[3] * x.shape[4];
    std::vector<double> mass(static_cast<std::size_t>(NL), 0.0);
    for (std::int64_t c = 0; c < NL; ++c) {
        const double* xi = x.data() + c * S;
        double t = 0.0;
        for (std::int64_t p = 0; p < S; ++p)
            if (xi[p] > 0.0) t += xi[p];
        mass[static_cast<std::size_t>(c)] = t;
    }
    return mass;
}

Var dsnt_coords(const Var& x) {
    if (x->value.shape.size() != 5) throw shape_error("dsnt expects (N,L,D,H,W)");
    const std::int64_t N = x->value.shape[0], L = x->value.shape[1];
    const std::int64_t D = x->value.shape[2], H = x->value.shape[3], W = x->value.shape[4];
    const std::int64_t S = D * H * W;
    const double nx = static_cast<double>(std::max<std::int64_t>(W - 1, 1));
    const double ny = static_cast<double>(std::max<std::int64_t>(H - 1, 1));
    const double nz = static_cast<double>(std::max<std::int64_t>(D - 1, 1));

    Tensor out({N, L, 3});
    // per-channel rectified mass and unnormalized expectations, kept for backward
    auto mass = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N * L));
    auto ex = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N * L * 3));

    for (std::int64_t c = 0; c < N * L; ++c) {
        const double* xi = x->value.data() + c * S;
        double t = 0.0, sx = 0.0, sy = 0.0, sz = 0.0;
        std::int64_t p = 0;
        for (std::int64_t z = 0; z < D; ++z)
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t xx = 0; xx < W; ++xx, ++p) {
                    const double r = xi[p] > 0.0 ? xi[p] : 0.0;
                    t += r;
                    sx += r * static_cast<double>(xx);
                    sy += r * static_cast<double>(y);
                    sz += r * static_cast<double>(z);
                }
        t += 1e-12;
        const double yx = sx / t, yy = sy / t, yz = sz / t;
        (*mass)[static_cast<std::size_t>(c)] = t;
        (*ex)[static_cast<std::size_t>(3 * c + 0)] = yx;
        (*ex)[static_cast<std::size_t>(3 * c + 1)] = yy;
        (*ex)[static_cast<std::size_t>(3 * c + 2)] = yz;
        out.v[static_cast<std::size_t>(3 * c + 0)] = yx / nx;
        out.v[static_cast<std::size_t>(3 * c + 1)] = yy / ny;
        out.v[static_cast<std::size_t>(3 * c + 2)] = yz / nz;
    }

    return make_op(std::move(out), {x}, [=](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::int64_t c = 0; c < N * L; ++c) {
            const double t = (*mass)[static_cast<std::size_t>(c)];
            const double yx = (*ex)[static_cast<std::size_t>(3 * c + 0)];
            const double yy = (*ex)[static_cast<std::size_t>(3 * c + 1)];
            const double yz = (*ex)[static_cast<std::size_t>(3 * c + 2)];
            const double ax = self.grad.v[static_cast<std::size_t>(3 * c + 0)] / (nx * t);
            const double ay = self.grad.v[static_cast<std::size_t>(3 * c + 1)] / (ny * t);
            const double az = self.grad.v[static_cast<std::size_t>(3 * c + 2)] / (nz * t);
            if (ax == 0.0 && ay == 0.0 && az == 0.0) continue;
            const double* xi = xn.value.data() + c * S;
            double* gx = xn.grad.data() + c * S;
            std::int64_t p = 0;
            for (std::int64_t z = 0; z < D; ++z) {
                const double tz = az * (static_cast<double>(z) - yz);
                for (std::int64_t y = 0; y < H; ++y) {
                    const double tyz = tz + ay * (static_cast<double>(y) - yy);
                    for (std::int64_t xx = 0; xx < W; ++xx, ++p)
                        if (xi[p] > 0.0)
                            gx[p] += ax * (static_cast<double>(xx) - yx) + tyz;
                }
            }
        }
    });
}

Var bce_with_logits_mean(const Var& logits, const Var& target) {
    if (logits->value.shape != target->value.shape)
        throw shape_error("bce_with_logits: logits/target shape mismatch");
    const std::int64_t n = logits->value.numel();
    double acc = 0.0;
    for (std::int64_t p = 0; p < n; ++p) {
        const double z = logits->value.v[p];
        const double t = target->value.v[p];
        acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor out({1});
    out.v[0] = acc / static_cast<double>(n);
    return make_op(std::move(out), {logits, target}, [n](Node& self) {
        Node& zn = *self.parents[0];
        Node& tn = *self.parents[1];
        const double g = self.grad.v[0] / static_cast<double>(n);
        if (zn.requires_grad) {
            zn.ensure_grad();
            for (std::int64_t p = 0; p < n; ++p) {
                const double s = 1.0 / (1.0 + std::exp(-zn.value.v[p]));
                zn.grad.v[p] += g * (s - tn.value.v[p]);
            }
        }
    });
}

Var mse_mean(const Var& pred, const Var& target) {
    if (pred->value.shape != target->value.shape)
        throw shape_error("mse_mean: prediction/target shape mismatch");
    const std::int64_t n = pred->value.numel();
    double acc = 0.0;
    for (std::int64_t p = 0; p < n; ++p) {
        const double d = pred->value.v[p] - target->value.v[p];
        acc += d * d;
    }
    Tensor out({1});
    out.v[0] = acc / static_cast<double>(n);
    return make_op(std::move(out), {pred, target}, [n](Node& self) {
        Node& pn = *self.parents[0];
        Node& tn = *self.parents[1];
        const double g = self.grad.v[0] * 2.0 / static_cast<double>(n);
        if (pn.requires_grad) {
            pn.ensure_grad();
            for (std::int64_t p = 0; p < n; ++p)
                pn.grad.v[p] += g * (pn.value.v[p] - tn.value.v[p]);
        }
    });
}

void backward(const Var& loss) {
    if (loss->value.numel() != 1) throw contract_error("backward expects a scalar loss");

    // Iterative post-order DFS; children are processed before parents on the
    // reversed list.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad.v[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->grad_allocated) node->backward_fn(*node);
    }
}

Adam::Adam(std::vector<Var> params, double lr_, double weight_decay_, double beta1, double beta2, double eps)
    : lr(lr_), weight_decay(weight_decay_), params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(Tensor(p->value.shape));
        v_.emplace_back(Tensor(p->value.shape));
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p->ensure_grad();
        p->zero_grad();
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Node& p = *params_[i];
        p.ensure_grad();
        const std::int64_t n = p.value.numel();
        for (std::int64_t q = 0; q < n; ++q) {
            const double g = p.grad.v[q] + weight_decay * p.value.v[q];
            m_[i].v[q] = beta1_ * m_[i].v[q] + (1.0 - beta1_) * g;
            v_[i].v[q] = beta2_ * v_[i].v[q] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i].v[q] / bc1;
            const double vhat = v_[i].v[q] / bc2;
            p.value.v[q] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

} // namespace ceph3d::nn
