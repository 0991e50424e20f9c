#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>

#include "minidetr/box.hpp"
#include "minidetr/image.hpp"
#include "minidetr/model.hpp"

namespace minidetr {

// All perturbations are pure seeded functions: (image, spec) -> image,
// bitwise reproducible, with every output pixel clamped to [0,1].

// ---- patch grid -------------------------------------------------------------

// Occlusion always works on a fixed 10x10 patch grid; boundary patches absorb
// the remainder pixels when the image size is not a multiple of 10.
inline constexpr int kOcclusionGrid = 10;
inline constexpr int kOcclusionPatches = kOcclusionGrid * kOcclusionGrid;

struct PatchRect {
    int y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // half-open pixel ranges
};

// pixel extent of grid patch `index` (row-major) in an h x w image; h, w >= 10
PatchRect patch_rect(int index, int height, int width);

// patches whose pixel rectangle intersects `region` (normalized cxcywh box)
std::array<char, kOcclusionPatches> patches_in_region(const Box& region, int height, int width);

// ---- occlusion --------------------------------------------------------------

enum class OcclusionMode { Random, Salient };

struct OcclusionSpec {
    OcclusionMode mode = OcclusionMode::Random;
    double ratio = 0.0;  // fraction of patches to zero, in [0,1]
    unsigned long long seed = 0;
    std::optional<Box> region;  // salient mode: restrict scoring/selection here
};

// zeros exactly round(ratio*100) patches chosen as a seeded uniform sample
// without replacement; every other pixel is untouched
Image random_occlude(const Image& image, const OcclusionSpec& spec);

enum class SaliencyMethod { Attention, EdgeEnergy };

struct SaliencyMap {
    std::array<double, kOcclusionPatches> scores{};   // >= 0, finite
    std::array<char, kOcclusionPatches> in_region{};  // candidates for occlusion
};

// per-patch saliency; Attention sums decoder cross-attention mass of the
// top-confidence query (last layer, head-averaged), EdgeEnergy sums squared
// central-difference gradients. Scores outside `region` (when set) are zeroed.
SaliencyMap saliency_map(const Image& image, Detector* model, const std::optional<Box>& region,
                         SaliencyMethod method);

// zeros the round(ratio * |region patches|) highest-scoring region patches;
// score ties break toward the smaller patch index
Image salient_occlude(const Image& image, const OcclusionSpec& spec, const SaliencyMap& smap);

// ---- adversarial sticker ----------------------------------------------------

struct StickerSpec {
    Image patch;
    std::optional<std::pair<int, int>> location;  // top-left (x, y) pixels
    std::optional<double> scale;                  // > 0, nearest-neighbor
    unsigned long long seed = 0;                  // drives absent location/scale
};

// pixels under the (scaled) patch are replaced outright; random placement draws
// scale first, then location, from a generator seeded with spec.seed
Image apply_sticker(const Image& image, const StickerSpec& spec);

// seeded high-frequency random RGB square, the default sticker texture
Image make_default_sticker(int side, unsigned long long seed);

// ---- corruption grid --------------------------------------------------------

enum class CorruptionFamily {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Contrast,
    Elastic,
    Pixelate,
    JpegBlocking,
};

inline constexpr int kCorruptionFamilies = 15;
inline constexpr int kCorruptionSeverities = 5;

const char* corruption_family_name(CorruptionFamily f);
CorruptionFamily corruption_family_from_name(const std::string& name);  // throws ValidationError

struct CorruptionSpec {
    CorruptionFamily family = CorruptionFamily::GaussianNoise;
    int severity = 1;  // 1..5
    unsigned long long seed = 0;
};

// one strength knob per (family, severity); the shipped defaults are tuned so
// MSE against the clean image strictly grows with severity for every family
struct CorruptionTable {
    std::array<std::array<double, kCorruptionSeverities>, kCorruptionFamilies> level{};

    double at(CorruptionFamily f, int severity) const {
        return level[static_cast<int>(f)][severity - 1];
    }
    static CorruptionTable defaults();
};

Image corrupt(const Image& image, const CorruptionSpec& spec,
              const CorruptionTable& table = CorruptionTable::defaults());

}  // namespace minidetr
