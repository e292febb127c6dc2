#include "tryon/fixture.hpp"

#include "tryon/image_io.hpp"
#include "tryon/pipeline.hpp"
#include "tryon/tetgrid.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <random>

namespace tryon
{
    namespace
    {
        using json = nlohmann::json;

        const Vec3 kSkin(0.87, 0.71, 0.58);
        const std::array<const char *, 8> kPalette {"white", "black", "red", "blue", "green", "yellow", "pink", "gray"};
        const std::array<double, 4> kSleeves {0.0, 0.3, 0.6, 1.0};
        const std::array<double, 2> kHems {0.6, 1.0};

        const Bone & find_bone(const SkeletonSpec & spec, const std::string & name)
        {
            for (const Bone & b : spec.bones)
            {
                if (b.name == name)
                {
                    return b;
                }
            }
            throw InvalidInput("skeleton has no bone named '" + name + "'");
        }

        Vec3 region_color(Region r, const GarmentSpec & g)
        {
            switch (r)
            {
            case Region::Top: return color_rgb(g.color);
            case Region::Bottom: return color_rgb("navy");
            case Region::Shoes: return color_rgb("white");
            case Region::Hair: return color_rgb("black");
            case Region::Skin: break;
            }
            return kSkin;
        }

        void write_json(const json & j, const std::filesystem::path & path)
        {
            std::ofstream out(path);
            if (!out)
            {
                throw std::runtime_error("cannot open for writing: " + path.string());
            }
            out << j.dump(2) << '\n';
        }

        Image flat_color(const TriMesh & mesh, const Camera & cam)
        {
            return rasterize(mesh, cam, 0.25).color;
        }

        Image normal_map(const TriMesh & mesh, const Camera & cam)
        {
            return rasterize(mesh, cam, 0.25).normal;
        }
    }  // namespace

    FixtureSpec fixture_preset(const std::string & name)
    {
        FixtureSpec s;
        s.name = name;
        if (name == "lengthen-sleeves")
        {
            s.source.sleeve = 0.3;
            s.target.sleeve = 1.0;
        }
        else if (name == "identity")
        {
            s.target = s.source;
        }
        else
        {
            throw InvalidInput("unknown fixture preset '" + name + "' (expected lengthen-sleeves or identity)");
        }
        return s;
    }

    Vec3 color_rgb(const std::string & name)
    {
        static const std::map<std::string, Vec3> table {
            {"white", {0.95, 0.95, 0.95}}, {"black", {0.08, 0.08, 0.08}}, {"orange", {0.95, 0.55, 0.10}}, {"red", {0.85, 0.12, 0.12}},
            {"blue", {0.15, 0.30, 0.85}},  {"green", {0.15, 0.65, 0.25}}, {"gray", {0.50, 0.50, 0.50}},   {"yellow", {0.95, 0.85, 0.15}},
            {"pink", {0.95, 0.60, 0.75}},  {"purple", {0.50, 0.20, 0.65}}, {"brown", {0.45, 0.28, 0.15}}, {"beige", {0.85, 0.78, 0.62}},
            {"navy", {0.10, 0.12, 0.35}},
        };
        const auto it = table.find(name);
        require(it != table.end(), "unknown color '" + name + "'");
        return it->second;
    }

    std::string sleeve_word(double sleeve)
    {
        if (sleeve <= 0.0)
        {
            return "sleeveless";
        }
        if (sleeve <= 0.4)
        {
            return "short-sleeved";
        }
        if (sleeve <= 0.75)
        {
            return "three-quarter-sleeved";
        }
        return "long-sleeved";
    }

    std::string describe_garment(const GarmentSpec & g)
    {
        return g.color + " " + sleeve_word(g.sleeve) + (g.hem < 1.0 ? " crop top" : " top");
    }

    SlottedDescription describe_outfit(const GarmentSpec & garment)
    {
        SlottedDescription d;
        d.slots = {{"top", describe_garment(garment)}, {"bottom", "navy pants"}, {"shoes", "white sneakers"}, {"hair", "black bob"}};
        return d;
    }

    ClothedBody::ClothedBody(const SkeletonSpec & body, const GarmentSpec & garment) : body_(body), garment_(garment)
    {
        require(garment.sleeve >= 0.0 && garment.sleeve <= 1.0, "sleeve fraction must lie in [0, 1]");
        require(garment.hem > 0.0 && garment.hem <= 1.0, "hem fraction must lie in (0, 1]");
        require(garment.thickness > 0.0, "garment thickness must be positive");
        color_rgb(garment.color);
        const double th = garment.thickness;
        auto add = [&](const std::string & name, const Vec3 & a, const Vec3 & b, double r) { cloth_.bones.push_back({name, a, b, r + th}); };
        for (const char * name : {"chest", "shoulders"})
        {
            const Bone & b = find_bone(body_, name);
            add(name, b.joint_a, b.joint_b, b.radius);
        }
        const Bone & pelvis = find_bone(body_, "pelvis");
        add("pelvis", pelvis.joint_b, pelvis.joint_b + garment.hem * (pelvis.joint_a - pelvis.joint_b), pelvis.radius);
        if (garment.sleeve > 0.0)
        {
            for (const char * side : {"l", "r"})
            {
                const Bone & upper = find_bone(body_, std::string("upper_arm_") + side);
                const Bone & fore = find_bone(body_, std::string("forearm_") + side);
                const double lu = (upper.joint_b - upper.joint_a).norm();
                const double lf = (fore.joint_b - fore.joint_a).norm();
                const double covered = garment.sleeve * (lu + lf);
                if (covered <= lu)
                {
                    add("sleeve_upper", upper.joint_a, upper.joint_a + (covered / lu) * (upper.joint_b - upper.joint_a), upper.radius);
                }
                else
                {
                    add("sleeve_upper", upper.joint_a, upper.joint_b, upper.radius);
                    add("sleeve_fore", fore.joint_a, fore.joint_a + ((covered - lu) / lf) * (fore.joint_b - fore.joint_a), fore.radius);
                }
            }
        }
    }

    double ClothedBody::body_distance(const Vec3 & p) const
    {
        return body_.signed_distance(p);
    }

    double ClothedBody::garment_distance(const Vec3 & p) const
    {
        return cloth_.signed_distance(p);
    }

    Region ClothedBody::region(const Vec3 & p) const
    {
        int nearest = -1;
        const double db = body_.signed_distance(p, &nearest);
        if (cloth_.signed_distance(p) <= db)
        {
            return Region::Top;
        }
        const Bone & b = body_.bones[std::size_t(nearest)];
        if (b.name == "head")
        {
            return p.y() > b.joint_a.y() ? Region::Hair : Region::Skin;
        }
        if (b.name.starts_with("foot"))
        {
            return Region::Shoes;
        }
        if (b.name == "pelvis" || b.name.starts_with("thigh") || b.name.starts_with("shin"))
        {
            return Region::Bottom;
        }
        return Region::Skin;
    }

    TriMesh extract_surface(const std::function<double(const Vec3 &)> & sdf, int resolution)
    {
        const Eigen::AlignedBox3d box = geometry_bounds();
        const double cell = (box.max() - box.min()).maxCoeff() / resolution;
        const TetGrid grid = build_tet_grid(box, resolution, sdf, cell);
        VecX values = VecX::Ones(grid.num_vertices());
        for (int v : grid.active_vertices)
        {
            values[v] = sdf(grid.vertices.row(v).transpose());
        }
        return marching_tetrahedra(grid, values).mesh;
    }

    LabeledMesh clothed_mesh(const ClothedBody & person, int resolution)
    {
        LabeledMesh out;
        out.mesh = extract_surface([&](const Vec3 & p) { return person.distance(p); }, resolution);
        out.mesh.colors.resize(out.mesh.num_vertices(), 3);
        out.regions.resize(std::size_t(out.mesh.num_vertices()));
        for (Index v = 0; v < out.mesh.num_vertices(); ++v)
        {
            const Region r = person.region(out.mesh.vertices.row(v).transpose());
            out.regions[std::size_t(v)] = r;
            out.mesh.colors.row(v) = region_color(r, person.garment()).transpose();
        }
        return out;
    }

    TriMesh garment_mesh(const ClothedBody & person, int resolution)
    {
        TriMesh m = extract_surface([&](const Vec3 & p) { return person.garment_distance(p); }, resolution);
        m.colors = color_rgb(person.garment().color).transpose().replicate(m.num_vertices(), 1);
        return m;
    }

    Image region_mask(const LabeledMesh & mesh, const Camera & camera, Region region)
    {
        const RenderOutput out = rasterize(mesh.mesh, camera, 0.25);
        Image m(camera.resolution, camera.resolution, 1);
        for (Index p = 0; p < m.pixels(); ++p)
        {
            if (!out.covered(p))
            {
                continue;
            }
            Index k = 0;
            out.bary.row(p).maxCoeff(&k);
            const int v = mesh.mesh.faces(out.face[std::size_t(p)], k);
            m.data(p, 0) = mesh.regions[std::size_t(v)] == region ? 1.0 : 0.0;
        }
        return m;
    }

    Image coverage_mask(const TriMesh & mesh, const Camera & camera)
    {
        const RenderOutput out = rasterize(mesh, camera, 0.25);
        Image m(camera.resolution, camera.resolution, 1);
        for (Index p = 0; p < m.pixels(); ++p)
        {
            m.data(p, 0) = out.covered(p) ? 1.0 : 0.0;
        }
        return m;
    }

    void generate_synthetic_fixture(const FixtureSpec & spec, std::uint64_t seed, const std::filesystem::path & dir)
    {
        require(spec.resolution >= 32 && spec.corpus_cards >= 0 && spec.mesh_resolution >= 8, "fixture resolution >= 32 and mesh resolution >= 8 required");
        std::filesystem::create_directories(dir / "corpus");
        const SkeletonSpec body = spec.body.normalized();
        const ClothedBody source(body, spec.source);
        const ClothedBody target(body, spec.target);
        const LabeledMesh src = clothed_mesh(source, spec.mesh_resolution);
        const LabeledMesh tgt = clothed_mesh(target, spec.mesh_resolution);
        const TriMesh garment = garment_mesh(target, spec.mesh_resolution);
        const Camera front = front_camera(spec.resolution);
        const Camera back = back_camera(spec.resolution);

        write_png(flat_color(src.mesh, front), dir / "source.png");
        write_png(flat_color(tgt.mesh, front), dir / "pseudo.png");
        write_png(normal_map(src.mesh, front), dir / "source_normal.png");
        write_png(normal_map(tgt.mesh, front), dir / "pseudo_normal.png");
        write_png(normal_map(tgt.mesh, back), dir / "pseudo_normal_back.png");
        write_png(flat_color(garment, front), dir / "garment.png");
        write_png(normal_map(garment, front), dir / "garment_normal.png");

        const Image src_sil = coverage_mask(src.mesh, front);
        write_png(src_sil, dir / "source_mask.png");
        write_png(coverage_mask(tgt.mesh, front), dir / "pseudo_mask.png");
        write_png(coverage_mask(tgt.mesh, back), dir / "pseudo_mask_back.png");

        // the try-on region is where the top's visible footprint changes
        const Image src_top = region_mask(src, front, Region::Top);
        const Image tgt_top = region_mask(tgt, front, Region::Top);
        write_png(src_top, dir / "source_top_mask.png");
        write_png(tgt_top, dir / "pseudo_top_mask.png");
        Image m(spec.resolution, spec.resolution, 1), keep(spec.resolution, spec.resolution, 1);
        m.data = (src_top.data.array() != tgt_top.data.array()).cast<double>().matrix();
        keep.data = (src_sil.data.array() * (1.0 - m.data.array())).matrix();
        write_png(m, dir / "try_on_mask.png");
        write_png(keep, dir / "keep_mask.png");
        write_skeleton(body, dir / "skeleton.txt");

        json manifest;
        manifest["resolution"] = spec.resolution;
        manifest["files"] = {{"source_image", "source.png"},
                             {"garment_image", "garment.png"},
                             {"garment_normal", "garment_normal.png"},
                             {"pseudo_image", "pseudo.png"},
                             {"pseudo_mask", "pseudo_mask.png"},
                             {"try_on_mask", "try_on_mask.png"},
                             {"keep_mask", "keep_mask.png"},
                             {"source_normal", "source_normal.png"},
                             {"pseudo_normal", "pseudo_normal.png"},
                             {"pseudo_mask_back", "pseudo_mask_back.png"},
                             {"pseudo_normal_back", "pseudo_normal_back.png"}};
        manifest["source_desc"] = describe_outfit(spec.source).slots;
        manifest["garment_desc"] = {{"slot", "top"}, {"text", describe_garment(spec.target)}};
        manifest["skeleton"] = "skeleton.txt";
        write_json(manifest, dir / "manifest.json");

        // corpus: a few garment variants, recolored and seen from random cameras
        const int card_res = 4 * kLatentSide;
        const int corpus_mesh_res = 64;
        struct Variant
        {
            GarmentSpec garment;
            LabeledMesh person;
            TriMesh garment_mesh;
        };
        std::vector<Variant> variants;
        if (spec.corpus_cards > 0)
        {
            for (double sleeve : kSleeves)
            {
                for (double hem : kHems)
                {
                    Variant v;
                    v.garment.sleeve = sleeve;
                    v.garment.hem = hem;
                    const ClothedBody person(body, v.garment);
                    v.person = clothed_mesh(person, corpus_mesh_res);
                    v.garment_mesh = garment_mesh(person, corpus_mesh_res);
                    variants.push_back(std::move(v));
                }
            }
        }
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick_variant(0, variants.empty() ? 0 : variants.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_color(0, kPalette.size() - 1);
        const Camera garment_cam = front_camera(card_res);
        std::map<std::string, bool> written;
        std::ofstream index(dir / "corpus" / "index.jsonl");
        if (!index)
        {
            throw std::runtime_error("cannot open corpus index for writing");
        }
        for (int k = 0; k < spec.corpus_cards; ++k)
        {
            const std::size_t vi = pick_variant(rng);
            const std::string color = kPalette[pick_color(rng)];
            const bool normal_card = k % 2 == 1;
            Variant & v = variants[vi];
            GarmentSpec g = v.garment;
            g.color = color;
            const Camera cam = sample_camera(normal_card ? Stage::Geometry : Stage::Texture, CameraTag::Random, seed * 7919ULL + std::uint64_t(k), card_res);

            TriMesh person = v.person.mesh;
            for (Index i = 0; i < person.num_vertices(); ++i)
            {
                person.colors.row(i) = region_color(v.person.regions[std::size_t(i)], g).transpose();
            }
            char card[32];
            std::snprintf(card, sizeof(card), "card_%04d.png", k);
            write_png(normal_card ? normal_map(person, cam) : flat_color(person, cam), dir / "corpus" / card);

            const std::string stem = "garment_v" + std::to_string(vi) + (normal_card ? std::string("_normal") : "_" + color);
            const std::string gfile = stem + ".png";
            if (!written[gfile])
            {
                TriMesh gm = v.garment_mesh;
                gm.colors = color_rgb(color).transpose().replicate(gm.num_vertices(), 1);
                write_png(normal_card ? normal_map(gm, garment_cam) : flat_color(gm, garment_cam), dir / "corpus" / gfile);
                written[gfile] = true;
            }
            const SlottedDescription d = describe_outfit(g);
            std::string text;
            for (const std::string & t : d.tokens())
            {
                text += (text.empty() ? "" : " ") + t;
            }
            index << json {{"image", card}, {"garment", gfile}, {"text", text}, {"kind", normal_card ? "normal" : "color"}}.dump() << '\n';
        }
    }

    std::vector<TrainingSample> load_corpus(const std::filesystem::path & dir, const Vocabulary & vocab)
    {
        std::filesystem::path root = dir;
        if (!std::filesystem::exists(root / "index.jsonl") && std::filesystem::exists(dir / "corpus" / "index.jsonl"))
        {
            root = dir / "corpus";
        }
        std::ifstream in(root / "index.jsonl");
        require(bool(in), "corpus index not found under " + dir.string());
        std::map<std::string, Eigen::Matrix<double, 4, 3>> garments;
        std::vector<TrainingSample> out;
        std::string line;
        while (std::getline(in, line))
        {
            if (line.empty())
            {
                continue;
            }
            const json j = json::parse(line);
            TrainingSample s;
            s.z0 = encode_latent(read_png(root / j.at("image").get<std::string>()));
            s.condition.text_ids = vocab.encode(tokenize(j.at("text").get<std::string>()));
            const std::string g = j.at("garment").get<std::string>();
            if (!garments.contains(g))
            {
                garments[g] = quadrant_means(read_png(root / g));
            }
            s.condition.image_means = garments[g];
            s.condition.has_image = true;
            out.push_back(std::move(s));
        }
        return out;
    }
}  // namespace tryon
