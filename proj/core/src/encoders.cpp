#include "cmx/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>
#include <string>

#include "cmx/tensor_io.hpp"

namespace cmx {

namespace {

constexpr float k_dolp_eps = 1e-6f;
constexpr double k_pi = 3.14159265358979323846;

void require_stack_shapes(const PolarStack& ps) {
    require_same_shape(ps.i0, ps.i45, "polar stack");
    require_same_shape(ps.i0, ps.i90, "polar stack");
    require_same_shape(ps.i0, ps.i135, "polar stack");
    if (ps.i0.rank() != 2 && !(ps.i0.rank() == 3 && ps.i0.extent(2) == 3)) {
        throw ShapeError("polar stack images must be HxW or HxWx3, got " +
                         shape_string(ps.i0.shape()));
    }
}

/// Replicate an H x W map into H x W x 3.
Tensor replicate3(const Tensor& m) {
    require_rank(m, 2, "replicate3");
    const std::uint32_t h = m.extent(0), w = m.extent(1);
    Tensor out({h, w, 3});
    for (std::size_t p = 0; p < m.size(); ++p) {
        out[p * 3] = m[p];
        out[p * 3 + 1] = m[p];
        out[p * 3 + 2] = m[p];
    }
    return out;
}

}  // namespace

StokesMaps stokes(const PolarStack& ps) {
    require_stack_shapes(ps);
    StokesMaps sm{Tensor(ps.i0.shape()), Tensor(ps.i0.shape()), Tensor(ps.i0.shape())};
    for (std::size_t i = 0; i < ps.i0.size(); ++i) {
        sm.s0[i] = ps.i0[i] + ps.i90[i];
        sm.s1[i] = ps.i0[i] - ps.i90[i];
        sm.s2[i] = ps.i45[i] - ps.i135[i];
    }
    return sm;
}

double polar_consistency_residual(const PolarStack& ps) {
    require_stack_shapes(ps);
    double worst = 0;
    for (std::size_t i = 0; i < ps.i0.size(); ++i) {
        const double r = std::abs(double(ps.i0[i]) + ps.i90[i] - ps.i45[i] - ps.i135[i]);
        worst = std::max(worst, r);
    }
    return worst;
}

Tensor dolp(const StokesMaps& sm) {
    Tensor out(sm.s0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (sm.s0[i] <= k_dolp_eps) {
            out[i] = 0.0f;
            continue;
        }
        const float v = std::sqrt(sm.s1[i] * sm.s1[i] + sm.s2[i] * sm.s2[i]) / sm.s0[i];
        out[i] = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

Tensor aolp(const StokesMaps& sm, AolpConvention conv) {
    Tensor out(sm.s0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float a = sm.s1[i], b = sm.s2[i];
        if (a == 0.0f && b == 0.0f) {
            out[i] = 0.0f;
            continue;
        }
        const float angle = conv == AolpConvention::PaperS1OverS2 ? std::atan2(a, b)
                                                                  : std::atan2(b, a);
        out[i] = 0.5f * angle;
    }
    return out;
}

Tensor polar_encode(const PolarStack& ps, PolarKind kind, Chroma chroma, AolpConvention conv) {
    require_stack_shapes(ps);
    const bool is_tri = ps.i0.rank() == 3;
    if ((chroma == Chroma::Tri) != is_tri) {
        throw ShapeError(std::string("polar_encode: stack is ") + (is_tri ? "tri" : "mono") +
                         "chromatic but " + (chroma == Chroma::Tri ? "tri" : "mono") +
                         " was requested");
    }
    StokesMaps sm = stokes(ps);
    Tensor map = kind == PolarKind::Dolp ? dolp(sm) : aolp(sm, conv);
    if (kind == PolarKind::Aolp) {
        // affine rescale (-pi/4, pi/4] -> [0, 1]
        for (std::size_t i = 0; i < map.size(); ++i) {
            map[i] = static_cast<float>((map[i] + k_pi / 4.0) / (k_pi / 2.0));
        }
    }
    return is_tri ? map : replicate3(map);
}

EventStream parse_event_csv(std::istream& is, std::uint32_t width, std::uint32_t height) {
    EventStream es;
    es.width = width;
    es.height = height;
    std::string line;
    std::size_t line_no = 0;
    bool first_data = true;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        // optional header: skip a first line that does not start with a number
        if (first_data && !line.empty() &&
            line.find_first_not_of(" \t") != std::string::npos &&
            !std::isdigit(static_cast<unsigned char>(line[line.find_first_not_of(" \t")])) &&
            line[line.find_first_not_of(" \t")] != '-' &&
            line[line.find_first_not_of(" \t")] != '+' &&
            line[line.find_first_not_of(" \t")] != '.') {
            first_data = false;
            continue;
        }
        first_data = false;
        std::istringstream ls(line);
        std::string tok;
        double vals[4];
        for (int f = 0; f < 4; ++f) {
            if (!std::getline(ls, tok, ',')) {
                throw IoError("events line " + std::to_string(line_no) + ": expected 4 fields");
            }
            try {
                std::size_t used = 0;
                vals[f] = std::stod(tok, &used);
                while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used])))
                    ++used;
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw IoError("events line " + std::to_string(line_no) + ": bad field '" + tok +
                              "'");
            }
        }
        if (vals[3] != 1.0 && vals[3] != -1.0) {
            throw IoError("events line " + std::to_string(line_no) + ": polarity must be +1 or -1");
        }
        if (vals[1] < 0 || vals[2] < 0 || vals[1] >= width || vals[2] >= height) {
            ++es.rejected;
            continue;
        }
        Event e;
        e.t = vals[0];
        e.x = static_cast<std::uint32_t>(vals[1]);
        e.y = static_cast<std::uint32_t>(vals[2]);
        e.polarity = vals[3] > 0 ? 1 : -1;
        es.events.push_back(e);
    }
    std::stable_sort(es.events.begin(), es.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    if (!es.events.empty()) {
        es.t1 = es.events.front().t;
        es.tn = es.events.back().t;
    }
    return es;
}

VoxelGrid voxelize(const EventStream& es, std::uint32_t bins, std::uint32_t upscale) {
    if (bins < 1 || upscale < 1) {
        throw std::invalid_argument("voxelize: bins and upscale must be >= 1");
    }
    VoxelGrid vg;
    vg.bins = bins;
    vg.upscale = upscale;
    vg.grid = Tensor({es.height, es.width, bins});
    if (es.events.empty()) return vg;

    const double dt = es.tn - es.t1;
    if (dt <= 0) {
        throw std::invalid_argument("voxelize: time window must satisfy tn > t1");
    }
    const std::uint32_t fine = bins * upscale;
    // integer accumulation keeps polarity mass conservation exact
    std::vector<std::int64_t> fine_grid(static_cast<std::size_t>(es.height) * es.width * fine, 0);
    for (const Event& e : es.events) {
        const double pos = (e.t - es.t1) / dt * fine;
        const std::uint32_t k = std::min<std::uint32_t>(static_cast<std::uint32_t>(pos), fine - 1);
        fine_grid[(static_cast<std::size_t>(e.y) * es.width + e.x) * fine + k] += e.polarity;
        vg.mass += e.polarity;
    }
    for (std::size_t p = 0; p < static_cast<std::size_t>(es.height) * es.width; ++p) {
        for (std::uint32_t b = 0; b < bins; ++b) {
            std::int64_t acc = 0;
            for (std::uint32_t u = 0; u < upscale; ++u) {
                acc += fine_grid[p * fine + b * upscale + u];
            }
            vg.grid[p * bins + b] = static_cast<float>(acc);
        }
    }
    return vg;
}

Tensor thermal_encode(const Tensor& t) {
    require_rank(t, 2, "thermal_encode");
    return replicate3(t);
}

Tensor depth_encode(const Tensor& d) {
    require_rank(d, 2, "depth_encode");
    float lo = d[0], hi = d[0];
    for (std::size_t i = 0; i < d.size(); ++i) {
        lo = std::min(lo, d[i]);
        hi = std::max(hi, d[i]);
    }
    if (!(hi > lo)) {
        throw std::invalid_argument("depth_encode: constant depth image cannot be normalized");
    }
    Tensor norm(d.shape());
    const float inv = 1.0f / (hi - lo);
    for (std::size_t i = 0; i < d.size(); ++i) norm[i] = (d[i] - lo) * inv;
    return replicate3(norm);
}

}  // namespace cmx
