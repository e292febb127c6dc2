#include "tryon/image_io.hpp"
#include "tryon/pipeline.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tryon
{
    namespace
    {
        using json = nlohmann::json;

        Image load_asset(const std::filesystem::path & dir, const json & files, const std::string & key, int resolution, bool mask)
        {
            const std::filesystem::path path = dir / files.at(key).get<std::string>();
            require(std::filesystem::exists(path), "asset file for '" + key + "' not found: " + path.string());
            Image img = read_image(path);
            if (mask)
            {
                require(img.channels() == 1, "mask '" + key + "' must have one channel");
            }
            else
            {
                require(img.channels() == 3, "image '" + key + "' must be RGB");
            }
            if (img.height != resolution || img.width != resolution)
            {
                img = resize_area(img, resolution, resolution);
            }
            if (mask)
            {
                img.data = (img.data.array() > 0.5).cast<double>().matrix();
            }
            return img;
        }

        bool power_of_two(int n)
        {
            return n > 0 && (n & (n - 1)) == 0;
        }

        std::string trim(const std::string & s)
        {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos)
            {
                return {};
            }
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        }

        template <typename T>
        T parse_number(const std::string & key, const std::string & value)
        {
            T out {};
            const char * end = value.data() + value.size();
            const auto [ptr, ec] = std::from_chars(value.data(), end, out);
            require(ec == std::errc() && ptr == end, "config value for '" + key + "' is not a valid number: " + value);
            return out;
        }

        bool parse_bool(const std::string & key, const std::string & value)
        {
            if (value == "true" || value == "1")
            {
                return true;
            }
            if (value == "false" || value == "0")
            {
                return false;
            }
            throw InvalidInput("config value for '" + key + "' must be true or false: " + value);
        }

        std::string number(double v)
        {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return buf;
        }
    }  // namespace

    AssetBundle ingest_assets(const std::filesystem::path & dir, const std::filesystem::path & manifest, int resolution)
    {
        const std::filesystem::path mpath = manifest.is_absolute() ? manifest : dir / manifest;
        std::ifstream in(mpath);
        require(bool(in), "cannot open manifest: " + mpath.string());
        json m;
        try
        {
            in >> m;
        }
        catch (const json::exception & e)
        {
            throw InvalidInput("malformed manifest " + mpath.string() + ": " + e.what());
        }
        require(m.contains("files") && m["files"].is_object(), "manifest has no 'files' table");
        const json & files = m["files"];
        for (const char * key : kRequiredAssets)
        {
            require(files.contains(key), std::string("manifest is missing required asset '") + key + "'");
        }

        AssetBundle a;
        a.resolution = resolution > 0 ? resolution : m.value("resolution", 64);
        require(a.resolution >= 32 && power_of_two(a.resolution), "working resolution must be a power of two >= 32");
        a.source_image = load_asset(dir, files, "source_image", a.resolution, false);
        a.garment_image = load_asset(dir, files, "garment_image", a.resolution, false);
        a.garment_normal = load_asset(dir, files, "garment_normal", a.resolution, false);
        a.pseudo_image = load_asset(dir, files, "pseudo_image", a.resolution, false);
        a.pseudo_mask = load_asset(dir, files, "pseudo_mask", a.resolution, true);
        a.try_on_mask = load_asset(dir, files, "try_on_mask", a.resolution, true);
        a.keep_mask = load_asset(dir, files, "keep_mask", a.resolution, true);
        a.source_normal = load_asset(dir, files, "source_normal", a.resolution, false);
        a.pseudo_normal = load_asset(dir, files, "pseudo_normal", a.resolution, false);
        if (files.contains("pseudo_mask_back"))
        {
            a.pseudo_mask_back = load_asset(dir, files, "pseudo_mask_back", a.resolution, true);
        }
        if (files.contains("pseudo_normal_back"))
        {
            a.pseudo_normal_back = load_asset(dir, files, "pseudo_normal_back", a.resolution, false);
        }

        const Index overlap = (a.try_on_mask.data.array() * a.keep_mask.data.array()).count();
        require(overlap == 0, "try-on mask and keep mask overlap on " + std::to_string(overlap) + " pixels");
        a.composite_normal = composite_pseudo_normal(a.pseudo_normal, a.source_normal, a.try_on_mask, a.keep_mask);
        // pixels in neither mask take the pseudo normal, so the background target matches the render's background
        for (Index p = 0; p < a.composite_normal.pixels(); ++p)
        {
            if (a.try_on_mask.data(p, 0) < 0.5 && a.keep_mask.data(p, 0) < 0.5)
            {
                a.composite_normal.data.row(p) = a.pseudo_normal.data.row(p);
            }
        }

        if (m.contains("source_desc"))
        {
            for (const auto & [slot, text] : m["source_desc"].items())
            {
                a.source_desc.slots[slot] = text.get<std::string>();
            }
        }
        if (m.contains("garment_desc"))
        {
            a.garment_desc.slot = m["garment_desc"].value("slot", "");
            a.garment_desc.text = m["garment_desc"].value("text", "");
        }
        if (m.contains("skeleton"))
        {
            a.skeleton = dir / m["skeleton"].get<std::string>();
            require(std::filesystem::exists(a.skeleton), "skeleton file not found: " + a.skeleton.string());
        }
        return a;
    }

    void StageConfig::validate() const
    {
        require(iterations >= 1, "iterations must be at least 1");
        require(lr > 0.0, "lr must be positive");
        require(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0, "final_lr_fraction must be in (0, 1]");
        require(render_resolution >= 32 && power_of_two(render_resolution), "render_resolution must be a power of two >= 32");
        require(tet_resolution >= 32 && power_of_two(tet_resolution), "tet_resolution must be a power of two >= 32");
        require(cfg_scale >= 0.0, "cfg_scale must be non-negative");
        require(sharpness > 0.0, "sharpness must be positive");
        require(t_range.min >= 1 && t_range.min <= t_range.max, "t range is empty or starts below 1");
        require(cameras.elevation_min <= cameras.elevation_max, "camera elevation range is inverted");
        require(cameras.radius > 0.0 && cameras.fov > 0.0 && cameras.fov < 180.0, "camera radius and fov must be positive");
        require(shell_offset > 0.0 && band > 0.0, "shell_offset and band must be positive");
        require(init_steps >= 1 && init_points >= 256, "init_steps must be >= 1 and init_points >= 256");
        weights.validate();
    }

    StageConfig stage_defaults(Stage stage)
    {
        StageConfig c;
        if (stage == Stage::Texture)
        {
            c.lr = 2e-2;
            c.final_lr_fraction = 1.0;
        }
        return c;
    }

    StageConfig parse_stage_config(const std::string & text, const StageConfig & base)
    {
        StageConfig c = base;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line))
        {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos)
            {
                line.resize(hash);
            }
            line = trim(line);
            if (line.empty())
            {
                continue;
            }
            const auto eq = line.find('=');
            require(eq != std::string::npos, "config line " + std::to_string(lineno) + " is not key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            auto dbl = [&] { return parse_number<double>(key, value); };
            auto integer = [&] { return parse_number<int>(key, value); };
            if (key == "iterations") c.iterations = integer();
            else if (key == "lr") c.lr = dbl();
            else if (key == "final_lr_fraction") c.final_lr_fraction = dbl();
            else if (key == "render_resolution") c.render_resolution = integer();
            else if (key == "tet_resolution") c.tet_resolution = integer();
            else if (key == "cfg_scale") c.cfg_scale = dbl();
            else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
            else if (key == "sharpness") c.sharpness = dbl();
            else if (key == "t_min") c.t_range.min = integer();
            else if (key == "t_max") c.t_range.max = integer();
            else if (key == "elevation_min") c.cameras.elevation_min = dbl();
            else if (key == "elevation_max") c.cameras.elevation_max = dbl();
            else if (key == "camera_radius") c.cameras.radius = dbl();
            else if (key == "fov") c.cameras.fov = dbl();
            else if (key == "lambda_psl") c.weights.psl = dbl();
            else if (key == "lambda_norm") c.weights.norm = dbl();
            else if (key == "lambda_sds_norm") c.weights.sds_norm = dbl();
            else if (key == "lambda_lap") c.weights.lap = dbl();
            else if (key == "lambda_recon") c.weights.recon = dbl();
            else if (key == "lambda_sds_tex") c.weights.sds_tex = dbl();
            else if (key == "mask_mode")
            {
                require(value == "guided" || value == "unmasked", "mask_mode must be guided or unmasked");
                c.mask_mode = value == "guided" ? MaskMode::Guided : MaskMode::Unmasked;
            }
            else if (key == "use_image_prompt") c.use_image_prompt = parse_bool(key, value);
            else if (key == "shell_offset") c.shell_offset = dbl();
            else if (key == "band") c.band = dbl();
            else if (key == "init_steps") c.init_steps = integer();
            else if (key == "init_points") c.init_points = integer();
            else throw InvalidInput("unknown config key '" + key + "' on line " + std::to_string(lineno));
        }
        c.validate();
        return c;
    }

    StageConfig read_stage_config(const std::filesystem::path & path, const StageConfig & base)
    {
        std::ifstream in(path);
        require(bool(in), "cannot open config: " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_stage_config(ss.str(), base);
    }

    std::string format_stage_config(const StageConfig & c)
    {
        std::ostringstream o;
        o << "iterations = " << c.iterations << '\n'
          << "lr = " << number(c.lr) << '\n'
          << "final_lr_fraction = " << number(c.final_lr_fraction) << '\n'
          << "render_resolution = " << c.render_resolution << '\n'
          << "tet_resolution = " << c.tet_resolution << '\n'
          << "cfg_scale = " << number(c.cfg_scale) << '\n'
          << "seed = " << c.seed << '\n'
          << "sharpness = " << number(c.sharpness) << '\n'
          << "t_min = " << c.t_range.min << '\n'
          << "t_max = " << c.t_range.max << '\n'
          << "elevation_min = " << number(c.cameras.elevation_min) << '\n'
          << "elevation_max = " << number(c.cameras.elevation_max) << '\n'
          << "camera_radius = " << number(c.cameras.radius) << '\n'
          << "fov = " << number(c.cameras.fov) << '\n'
          << "lambda_psl = " << number(c.weights.psl) << '\n'
          << "lambda_norm = " << number(c.weights.norm) << '\n'
          << "lambda_sds_norm = " << number(c.weights.sds_norm) << '\n'
          << "lambda_lap = " << number(c.weights.lap) << '\n'
          << "lambda_recon = " << number(c.weights.recon) << '\n'
          << "lambda_sds_tex = " << number(c.weights.sds_tex) << '\n'
          << "mask_mode = " << (c.mask_mode == MaskMode::Guided ? "guided" : "unmasked") << '\n'
          << "use_image_prompt = " << (c.use_image_prompt ? "true" : "false") << '\n'
          << "shell_offset = " << number(c.shell_offset) << '\n'
          << "band = " << number(c.band) << '\n'
          << "init_steps = " << c.init_steps << '\n'
          << "init_points = " << c.init_points << '\n';
        return o.str();
    }

    void write_run_record(const RunRecord & record, const std::filesystem::path & path)
    {
        std::ofstream out(path);
        if (!out)
        {
            throw std::runtime_error("cannot open for writing: " + path.string());
        }
        for (const IterationRecord & it : record.iterations)
        {
            json j(it.values);
            j["iteration"] = it.iteration;
            out << j.dump() << '\n';
        }
        json summary;
        summary["stage"] = record.stage;
        summary["final"] = record.final_metrics;
        summary["checkpoints"] = record.checkpoints;
        out << summary.dump() << '\n';
        if (!out)
        {
            throw std::runtime_error("write failed: " + path.string());
        }
    }

    std::vector<IterationRecord> read_run_record(const std::filesystem::path & path)
    {
        std::ifstream in(path);
        require(bool(in), "cannot open run record: " + path.string());
        std::vector<IterationRecord> out;
        std::string line;
        while (std::getline(in, line))
        {
            const json j = json::parse(line);
            if (!j.contains("iteration"))
            {
                continue;
            }
            IterationRecord r;
            r.iteration = j["iteration"].get<int>();
            for (const auto & [k, v] : j.items())
            {
                if (k != "iteration")
                {
                    r.values[k] = v.is_null() ? std::nan("") : v.get<double>();
                }
            }
            out.push_back(std::move(r));
        }
        return out;
    }

    void write_timing(const RunRecord & record, const std::filesystem::path & path)
    {
        std::ofstream out(path);
        if (!out)
        {
            throw std::runtime_error("cannot open for writing: " + path.string());
        }
        out << json {{"stage", record.stage}, {"wall_seconds", record.wall_seconds}}.dump() << '\n';
    }

    TriMesh body_proxy_for(const AssetBundle & assets, int resolution)
    {
        return build_humanoid_proxy(assets.skeleton.empty() ? default_humanoid_spec() : read_skeleton(assets.skeleton), resolution);
    }

    Image hard_silhouette(const RenderOutput & out)
    {
        Image m(out.resolution(), out.resolution(), 1);
        for (Index p = 0; p < m.pixels(); ++p)
        {
            m.data(p, 0) = out.covered(p) ? 1.0 : 0.0;
        }
        return m;
    }

    double silhouette_iou(const Image & a, const Image & b)
    {
        require(a.pixels() == b.pixels() && a.channels() == 1 && b.channels() == 1, "IoU needs two single-channel masks of one size");
        const auto ma = a.data.col(0).array() > 0.5;
        const auto mb = b.data.col(0).array() > 0.5;
        const Index inter = (ma && mb).count();
        const Index uni = (ma || mb).count();
        return uni == 0 ? 1.0 : double(inter) / double(uni);
    }

    Vec3 masked_mean_color(const RenderOutput & render, const Image & mask)
    {
        Vec3 sum = Vec3::Zero();
        Index n = 0;
        for (Index p = 0; p < render.color.pixels(); ++p)
        {
            if (render.covered(p) && mask.data(p, 0) > 0.5)
            {
                sum += render.color.data.row(p).transpose();
                ++n;
            }
        }
        return n == 0 ? Vec3::Zero() : Vec3(sum / double(n));
    }

    Vec3 foreground_mean_color(const Image & image)
    {
        Vec3 sum = Vec3::Zero();
        Index n = 0;
        for (Index p = 0; p < image.pixels(); ++p)
        {
            if (image.data.row(p).maxCoeff() > 0.0)
            {
                sum += image.data.row(p).transpose();
                ++n;
            }
        }
        return n == 0 ? Vec3::Zero() : Vec3(sum / double(n));
    }

    void export_mesh(const TriMesh & mesh, const std::filesystem::path & path)
    {
        write_obj(mesh, path);
    }

    double turntable_azimuth(int frame, int frames)
    {
        return 360.0 * frame / frames;
    }

    std::vector<std::filesystem::path> render_turntable(const TriMesh & mesh, int frames, int resolution, const std::filesystem::path & dir)
    {
        require(frames >= 1, "turntable needs at least one frame");
        std::filesystem::create_directories(dir);
        std::vector<std::filesystem::path> paths;
        for (int k = 0; k < frames; ++k)
        {
            Camera cam = front_camera(resolution);
            cam.azimuth = turntable_azimuth(k, frames);
            if (k > 0)
            {
                cam.tag = CameraTag::Random;
            }
            const RenderOutput out = rasterize(mesh, cam);
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%03d.png", k);
            paths.push_back(dir / name);
            write_png(mesh.has_colors() ? out.color : out.normal, paths.back());
        }
        return paths;
    }
}  // namespace tryon
