#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "infil/grid.hpp"
#include "infil/pipeline.hpp"

namespace infil {

// Per-modality tissue intensities. Outside the brain every modality is
// exactly zero; inside, the region base value plus seeded Gaussian noise.
struct ModalityIntensity {
    double brain = 1.0;
    double edema = 1.0;
    double enhancing = 1.0;
    double necrotic = 1.0;
};

// Synthetic patient geometry. All positions and semi-axes are in mm with
// voxel v at physical position v * spacing. The brain ellipsoid is centered
// in the volume; core and edema ellipsoids share the tumor center.
struct PhantomSpec {
    std::array<std::int64_t, 3> dims{64, 64, 64};
    Spacing spacing{1.0, 1.0, 1.0};
    std::array<double, 3> brain_semi_axes_mm{30.0, 30.0, 30.0};
    std::array<double, 3> tumor_center_mm{32.0, 32.0, 32.0};
    std::array<double, 3> core_semi_axes_mm{4.0, 4.0, 4.0};
    std::array<double, 3> edema_semi_axes_mm{8.0, 8.0, 8.0};
    std::array<ModalityIntensity, 4> intensities{
        ModalityIntensity{1.0, 0.8, 0.6, 0.4},    // t1: tumor hypointense
        ModalityIntensity{1.0, 0.9, 2.0, 0.5},    // t1ce: enhancing rim bright
        ModalityIntensity{1.0, 1.8, 1.2, 1.4},    // t2: edema bright
        ModalityIntensity{1.0, 2.0, 1.3, 1.1}};   // flair: edema brightest
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::string dataset = "brats2020";

    // Throws when the core exceeds the edema ellipsoid, the edema ellipsoid
    // is not (conservatively) inside the brain, or the brain exceeds the
    // volume. The brain check uses the edema bounding-box corner criterion,
    // which is sufficient but not necessary.
    void validate() const;
};

struct PhantomResult {
    MultiModalVolume volume;
    VoxelGrid seg;    // chosen vocabulary labels
    VoxelGrid zones;  // analytic zone oracle, independent of the label pipeline
};

// Builds the 4-modality volume, the tumor mask (necrotic inside 60% of the
// core semi-axes, enhancing in the remaining core shell, edema outside the
// core), and the analytic zone grid via a direct distance scan against the
// tumor boundary voxels. Bitwise reproducible from the seed; noise comes
// from a splitmix64 stream with Irwin-Hall normals, applied in raster order
// per modality.
PhantomResult generate_phantom(const PhantomSpec& spec);

// Predictor emitting the epsilon-smoothed one-hot (epsilon 1e-6) of a fixed
// truth grid for any requested window, located through the predict context
// and mirrored per flipped axis, so it is flip-equivariant by construction.
// Voxels in the end-padding region get the uniform distribution. Windows
// that start outside the volume or disagree with the truth dims are errors.
std::unique_ptr<Predictor> oracle_predictor(const VoxelGrid& truth_zones);

}  // namespace infil
