#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "cmx/tensor.hpp"

namespace cmx {

// --- polarization ------------------------------------------------------------

/// Four pixel-aligned intensity images at 0/45/90/135 degrees; rank 2 (H x W)
/// for monochromatic stacks, rank 3 (H x W x 3) for trichromatic ones.
struct PolarStack {
    Tensor i0, i45, i90, i135;
};

struct StokesMaps {
    Tensor s0, s1, s2;
};

enum class PolarKind { Dolp, Aolp };
enum class Chroma { Mono, Tri };

/// Argument order of the angle arctangent. Paper writes atan(S1/S2); the
/// conventional physics definition uses S2/S1.
enum class AolpConvention { PaperS1OverS2, PhysicsS2OverS1 };

StokesMaps stokes(const PolarStack& ps);

/// Worst-case |(i0+i90) - (i45+i135)| over the stack; reported, never enforced.
double polar_consistency_residual(const PolarStack& ps);

/// sqrt(s1^2+s2^2)/s0, clamped to [0,1]; pixels with s0 <= 1e-6 map to 0.
Tensor dolp(const StokesMaps& sm);

/// 0.5 * atan2 of the Stokes pair, range (-pi/4, pi/4]; 0 where s1 = s2 = 0.
Tensor aolp(const StokesMaps& sm, AolpConvention conv = AolpConvention::PaperS1OverS2);

/// 3-channel network input in [0,1]; mono replicates, tri computes per color.
Tensor polar_encode(const PolarStack& ps, PolarKind kind, Chroma chroma,
                    AolpConvention conv = AolpConvention::PaperS1OverS2);

// --- events ------------------------------------------------------------------

struct Event {
    double t = 0;  // seconds
    std::uint32_t x = 0, y = 0;
    int polarity = 0;  // -1 or +1
};

struct EventStream {
    std::vector<Event> events;  // sorted by t, all inside [t1, tn] and bounds
    double t1 = 0, tn = 0;
    std::uint32_t width = 0, height = 0;
    std::size_t rejected = 0;  // out-of-bounds input events
};

/// Parses "t,x,y,p" CSV lines (optional header). Malformed lines raise IoError
/// with the 1-based line number; out-of-bounds events are counted and dropped.
EventStream parse_event_csv(std::istream& is, std::uint32_t width, std::uint32_t height);

struct VoxelGrid {
    Tensor grid;  // H x W x B, signed polarity counts
    std::uint32_t bins = 0;
    std::uint32_t upscale = 1;
    std::int64_t mass = 0;  // signed polarity sum of retained events
};

/// Fine-grained voxelization: events land in B*u fine panels by hard floor
/// binning (events at tn clamp into the last panel), then each group of u
/// adjacent panels is summed into one output panel.
VoxelGrid voxelize(const EventStream& es, std::uint32_t bins, std::uint32_t upscale = 6);

// --- thermal / depth -----------------------------------------------------------

/// Replicates a single-channel map into 3 identical channels.
Tensor thermal_encode(const Tensor& t);

/// Min-max normalized depth replicated to 3 channels; HHA is out of scope.
/// Constant images are rejected (degenerate normalization).
Tensor depth_encode(const Tensor& d);

}  // namespace cmx
