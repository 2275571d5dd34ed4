#pragma once

#include "coxmark/geometry.hpp"
#include "coxmark/inference.hpp"
#include "coxmark/mesh.hpp"
#include "coxmark/model.hpp"
#include "coxmark/predict.hpp"
#include "coxmark/surface.hpp"
#include "coxmark/survey.hpp"

#include <string>
#include <vector>

namespace coxmark {

// Header stamp carried by every text output: "# config=<hash> seed=<seed>".
struct FileStamp {
    std::string config_hash = "none";
    std::uint64_t seed = 0;
    std::string line() const;
};

DomainPolygon read_geojson_polygon(const std::string& path);
void write_geojson_polygon(const std::string& path, const DomainPolygon& poly,
                           const FileStamp& stamp);

struct Region {
    std::string id;
    DomainPolygon polygon;
};
std::vector<Region> read_geojson_regions(const std::string& path);
void write_geojson_regions(const std::string& path, const std::vector<Region>& regions,
                           const FileStamp& stamp);

void write_mesh_csv(const std::string& nodes_path, const std::string& triangles_path,
                    const Mesh& mesh, const FileStamp& stamp);
Mesh read_mesh_csv(const std::string& nodes_path, const std::string& triangles_path);

void write_sample_csv(const std::string& path, const MarkedSample& sample, const FileStamp& stamp);
MarkedSample read_sample_csv(const std::string& path);

void write_population_csv(const std::string& path, const Population& pop, const FileStamp& stamp);

void write_surface_csv(const std::string& path, const Surface& surface, const FileStamp& stamp);
Surface read_surface_csv(const std::string& path);

void write_precision_csv(const std::string& path, const Eigen::SparseMatrix<double>& q,
                         const FileStamp& stamp);

void write_fit_json(const std::string& path, const JointModel& model, const HyperPosterior& hp,
                    const PosteriorDraws& draws, const FileStamp& stamp);

// Binary draw dump: 16-byte header (magic "CXMKDRAW", u16 version, u32 n_draws,
// u16 dim), then row-major little-endian doubles.
void write_draws_bin(const std::string& path, const PosteriorDraws& draws);
Eigen::MatrixXd read_draws_bin(const std::string& path);

void write_estimates_csv(const std::string& path, const std::vector<AreaEstimate>& estimates,
                         const FileStamp& stamp);

void write_intensity_grid_csv(const std::string& path, const PixelField& field,
                              const FileStamp& stamp);

std::string hash_string(const std::string& text); // FNV-1a hex digest

} // namespace coxmark
