#include "tryon/fixture.hpp"
#include "tryon/gradcheck.hpp"
#include "tryon/image_io.hpp"
#include "tryon/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace tryon;

namespace
{
    struct Common
    {
        std::string config;
        std::string assets;
        std::string out;
        std::optional<std::uint64_t> seed;
        std::optional<int> resolution;
    };

    void add_common(CLI::App * cmd, Common & c, bool needs_assets)
    {
        cmd->add_option("--config", c.config, "StageConfig file, key = value lines")->check(CLI::ExistingFile);
        auto * a = cmd->add_option("--assets", c.assets, "asset directory holding manifest.json")->check(CLI::ExistingDirectory);
        if (needs_assets)
        {
            a->required();
        }
        cmd->add_option("--out", c.out, "output path")->required();
        cmd->add_option("--seed", c.seed, "random seed");
        cmd->add_option("--resolution", c.resolution, "render resolution in pixels");
    }

    StageConfig load_config(const Common & c, Stage stage = Stage::Geometry)
    {
        const StageConfig base = stage_defaults(stage);
        StageConfig config = c.config.empty() ? base : read_stage_config(c.config, base);
        if (c.seed)
        {
            config.seed = *c.seed;
        }
        if (c.resolution)
        {
            config.render_resolution = *c.resolution;
        }
        config.validate();
        return config;
    }

    AssetBundle load_assets(const Common & c, const StageConfig & config)
    {
        return ingest_assets(c.assets, "manifest.json", config.render_resolution);
    }

    // an untrained denoiser is enough when its guidance is switched off
    Denoiser load_or_blank(const std::string & path, double sds_weight)
    {
        if (!path.empty())
        {
            return load_denoiser(path);
        }
        require(sds_weight == 0.0, "--denoiser is required when the SDS weight is nonzero");
        return Denoiser(DenoiserConfig {}, Vocabulary::builtin().size());
    }

    void save_record(const RunRecord & record, const fs::path & dir)
    {
        write_run_record(record, dir / (record.stage + "_record.jsonl"));
        write_timing(record, dir / (record.stage + "_timing.json"));
    }

    void print_metrics(const RunRecord & record)
    {
        for (const auto & [key, value] : record.final_metrics)
        {
            std::printf("%s %s = %.6g\n", record.stage.c_str(), key.c_str(), value);
        }
    }
}  // namespace

int main(int argc, char ** argv)
{
    CLI::App app {"Two-stage 3D virtual try-on on a capsule humanoid"};
    app.require_subcommand(1);

    Common fixture_opts;
    std::string preset = "lengthen-sleeves";
    auto * fixture = app.add_subcommand("fixture", "generate a synthetic asset directory and denoiser corpus");
    fixture->add_option("--out", fixture_opts.out, "output directory")->required();
    fixture->add_option("--seed", fixture_opts.seed, "random seed");
    fixture->add_option("--resolution", fixture_opts.resolution, "image side in pixels");
    fixture->add_option("--preset", preset, "lengthen-sleeves or identity");

    Common train_opts;
    TrainOptions train;
    auto * train_cmd = app.add_subcommand("train-denoiser", "train the noise predictor on the fixture corpus");
    train_cmd->add_option("--assets", train_opts.assets, "asset directory with corpus/")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--out", train_opts.out, "denoiser file")->required();
    train_cmd->add_option("--seed", train_opts.seed, "random seed");
    train_cmd->add_option("--steps", train.steps, "optimizer steps");
    train_cmd->add_option("--batch", train.batch, "samples per step");
    train_cmd->add_option("--lr", train.lr, "learning rate");

    Common fit_opts;
    auto * fit = app.add_subcommand("fit-sdf", "fit the initial geometry field to the body proxy");
    add_common(fit, fit_opts, false);

    Common geo_opts;
    std::string geo_denoiser, geo_init;
    auto * geometry = app.add_subcommand("geometry", "run the geometry stage");
    add_common(geometry, geo_opts, true);
    geometry->add_option("--denoiser", geo_denoiser, "trained denoiser")->check(CLI::ExistingFile);
    geometry->add_option("--init", geo_init, "initial field from fit-sdf")->check(CLI::ExistingFile);

    Common tex_opts;
    std::string tex_denoiser, tex_mesh;
    auto * texture = app.add_subcommand("texture", "run the texture stage on a frozen mesh");
    add_common(texture, tex_opts, true);
    texture->add_option("--denoiser", tex_denoiser, "trained denoiser")->check(CLI::ExistingFile);
    texture->add_option("--mesh", tex_mesh, "OBJ from the geometry stage")->required()->check(CLI::ExistingFile);

    Common render_opts;
    std::string render_mesh;
    int frames = 8;
    auto * render = app.add_subcommand("render", "write a turntable PNG sequence");
    render->add_option("--mesh", render_mesh, "OBJ to render")->required()->check(CLI::ExistingFile);
    render->add_option("--out", render_opts.out, "output directory")->required();
    render->add_option("--frames", frames, "number of views")->check(CLI::PositiveNumber);
    render->add_option("--resolution", render_opts.resolution, "image side in pixels");

    Common export_opts;
    std::string export_geometry, export_albedo;
    auto * export_cmd = app.add_subcommand("export", "extract a colored OBJ from trained fields");
    add_common(export_cmd, export_opts, false);
    export_cmd->add_option("--geometry", export_geometry, "geometry field")->required()->check(CLI::ExistingFile);
    export_cmd->add_option("--albedo", export_albedo, "albedo field")->check(CLI::ExistingFile);

    std::uint64_t gradcheck_seed = 0;
    auto * gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every backward pass");
    gradcheck->add_option("--seed", gradcheck_seed, "random seed");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError & e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try
    {
        if (*fixture)
        {
            FixtureSpec spec = fixture_preset(preset);
            if (fixture_opts.resolution)
            {
                spec.resolution = *fixture_opts.resolution;
            }
            generate_synthetic_fixture(spec, fixture_opts.seed.value_or(0), fixture_opts.out);
            std::printf("fixture '%s' written to %s\n", spec.name.c_str(), fixture_opts.out.c_str());
        }
        else if (*train_cmd)
        {
            const auto data = load_corpus(fs::path(train_opts.assets) / "corpus");
            train.seed = train_opts.seed.value_or(0);
            Denoiser d(DenoiserConfig {}, Vocabulary::builtin().size(), train.seed);
            const TrainTrace trace = train_denoiser(d, data, train);
            save_denoiser(d, train_opts.out);
            std::printf("trained on %zu cards, final loss %.6g\n", data.size(), trace.loss.empty() ? 0.0 : trace.loss.back());
        }
        else if (*fit)
        {
            const StageConfig config = load_config(fit_opts);
            AssetBundle assets;
            if (!fit_opts.assets.empty())
            {
                assets = load_assets(fit_opts, config);
            }
            const GeometrySetup setup = prepare_geometry(config, body_proxy_for(assets));
            fs::create_directories(fit_opts.out);
            save_field(setup.field, fs::path(fit_opts.out) / "geometry_init.field");
            export_mesh(evaluate_geometry(setup.field, setup.grid).mt.mesh, fs::path(fit_opts.out) / "geometry_init.obj");
            std::printf("fit-sdf final loss %.6g\n", setup.init.loss.empty() ? 0.0 : setup.init.loss.back());
        }
        else if (*geometry)
        {
            const StageConfig config = load_config(geo_opts);
            const AssetBundle assets = load_assets(geo_opts, config);
            const Denoiser d = load_or_blank(geo_denoiser, config.weights.sds_norm);
            std::optional<MLPField> init;
            if (!geo_init.empty())
            {
                init = load_field(geo_init);
            }
            const GeometrySetup setup = prepare_geometry(config, body_proxy_for(assets), init ? &*init : nullptr);
            GeometryResult r = run_geometry_stage(config, assets, setup, d);
            const fs::path dir = geo_opts.out;
            fs::create_directories(dir);
            save_field(r.field, dir / "geometry.field");
            export_mesh(r.mesh, dir / "geometry.obj");
            r.record.checkpoints = {(dir / "geometry.field").string(), (dir / "geometry.obj").string()};
            save_record(r.record, dir);
            print_metrics(r.record);
        }
        else if (*texture)
        {
            const StageConfig config = load_config(tex_opts, Stage::Texture);
            const AssetBundle assets = load_assets(tex_opts, config);
            const Denoiser d = load_or_blank(tex_denoiser, config.weights.sds_tex);
            TextureResult r = run_texture_stage(config, assets, read_obj(tex_mesh), initial_albedo_field(config), d);
            const fs::path dir = tex_opts.out;
            fs::create_directories(dir);
            save_field(r.field, dir / "texture.field");
            export_mesh(r.mesh, dir / "textured.obj");
            r.record.checkpoints = {(dir / "texture.field").string(), (dir / "textured.obj").string()};
            save_record(r.record, dir);
            print_metrics(r.record);
        }
        else if (*render)
        {
            const auto written = render_turntable(read_obj(render_mesh), frames, render_opts.resolution.value_or(256), render_opts.out);
            std::printf("%zu frames written to %s\n", written.size(), render_opts.out.c_str());
        }
        else if (*export_cmd)
        {
            const StageConfig config = load_config(export_opts);
            AssetBundle assets;
            if (!export_opts.assets.empty())
            {
                assets = load_assets(export_opts, config);
            }
            const MLPField g = load_field(export_geometry);
            const GeometrySetup setup = prepare_geometry(config, body_proxy_for(assets), &g);
            TriMesh mesh = evaluate_geometry(setup.field, setup.grid).mt.mesh;
            if (!export_albedo.empty())
            {
                mesh = evaluate_texture(load_field(export_albedo), mesh).mesh;
            }
            export_mesh(mesh, export_opts.out);
            std::printf("%lld vertices, %lld faces written to %s\n", static_cast<long long>(mesh.num_vertices()), static_cast<long long>(mesh.num_faces()),
                        export_opts.out.c_str());
        }
        else if (*gradcheck)
        {
            bool ok = true;
            for (const GradcheckResult & r : run_gradcheck(gradcheck_seed))
            {
                std::printf("%-4s %-48s error %.3e  tolerance %.0e  %.2fs\n", r.passed() ? "ok" : "FAIL", r.name.c_str(), r.error, r.tolerance, r.seconds);
                ok = ok && r.passed();
            }
            return ok ? 0 : 2;
        }
    }
    catch (const InvalidInput & e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    catch (const NumericalError & e)
    {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 2;
    }
    catch (const std::exception & e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
