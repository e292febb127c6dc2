#pragma once

#include "tryon/body_proxy.hpp"
#include "tryon/prompt_denoiser.hpp"
#include "tryon/renderer.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace tryon
{
    /// Procedural top: torso and sleeve capsules inflated by `thickness`.
    struct GarmentSpec
    {
        double sleeve = 0.3;  // covered fraction of the arm, shoulder to wrist
        double hem = 1.0;     // covered fraction of the pelvis bone, from the top
        std::string color = "white";
        double thickness = 0.012;
    };

    struct FixtureSpec
    {
        std::string name;
        GarmentSpec source;
        GarmentSpec target;
        int resolution = 64;        // image side
        int mesh_resolution = 96;   // lattice cells for the fixture surfaces
        int corpus_cards = 512;
        SkeletonSpec body = default_humanoid_spec();
    };

    /// "lengthen-sleeves" (short to long sleeves, same color) or "identity".
    FixtureSpec fixture_preset(const std::string & name);

    /// RGB of a color word from the vocabulary; rejects other words.
    Vec3 color_rgb(const std::string & name);

    std::string sleeve_word(double sleeve);

    /// Slot texts for a person wearing the garment, navy pants, white sneakers and a black bob.
    SlottedDescription describe_outfit(const GarmentSpec & garment);
    std::string describe_garment(const GarmentSpec & garment);

    enum class Region : int
    {
        Skin = 0,
        Top = 1,
        Bottom = 2,
        Shoes = 3,
        Hair = 4
    };

    /// Capsule body (normalized) wearing one garment.
    class ClothedBody
    {
    public:
        ClothedBody(const SkeletonSpec & body, const GarmentSpec & garment);

        double body_distance(const Vec3 & p) const;
        double garment_distance(const Vec3 & p) const;
        double distance(const Vec3 & p) const { return std::min(body_distance(p), garment_distance(p)); }
        Region region(const Vec3 & p) const;
        const GarmentSpec & garment() const { return garment_; }

    private:
        SkeletonSpec body_;
        SkeletonSpec cloth_;
        GarmentSpec garment_;
    };

    /// Marching Tetrahedra of a distance function on the geometry lattice at `resolution` cells.
    TriMesh extract_surface(const std::function<double(const Vec3 &)> & sdf, int resolution);

    struct LabeledMesh
    {
        TriMesh mesh;  // colored
        std::vector<Region> regions;
    };

    LabeledMesh clothed_mesh(const ClothedBody & person, int resolution);
    TriMesh garment_mesh(const ClothedBody & person, int resolution);

    /// 1 where the covering face's dominant corner has the given region.
    Image region_mask(const LabeledMesh & mesh, const Camera & camera, Region region);

    /// 1 where any face covers the pixel.
    Image coverage_mask(const TriMesh & mesh, const Camera & camera);

    /**
     * Writes the source and pseudo renders, masks and normal maps, the garment
     * images, a manifest, the normalized skeleton and `corpus_cards` denoiser
     * training cards under corpus/. Identical seeds give identical bytes.
     */
    void generate_synthetic_fixture(const FixtureSpec & spec, std::uint64_t seed, const std::filesystem::path & dir);

    /// Reads corpus/index.jsonl (or `dir`/index.jsonl) into training samples.
    std::vector<TrainingSample> load_corpus(const std::filesystem::path & dir, const Vocabulary & vocab = Vocabulary::builtin());
}  // namespace tryon
