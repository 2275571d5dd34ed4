#include "coxmark/io.hpp"
#include "coxmark/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace coxmark {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw io_error("cannot parse JSON in " + path + ": " + e.what());
    }
    return j;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary); // binary: no platform newline games
    if (!out) throw io_error("cannot write file: " + path);
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

DomainPolygon polygon_from_coordinates(const json& coords) {
    DomainPolygon poly;
    if (!coords.is_array() || coords.empty())
        throw io_error("GeoJSON polygon has no coordinate rings");
    auto read_ring = [](const json& ring) {
        std::vector<Vec2> out;
        for (const auto& pt : ring) out.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
        // GeoJSON rings repeat the first vertex at the end.
        if (out.size() >= 2 && out.front().x == out.back().x && out.front().y == out.back().y)
            out.pop_back();
        return out;
    };
    poly.vertices = read_ring(coords.at(0));
    for (std::size_t i = 1; i < coords.size(); ++i) poly.holes.push_back(read_ring(coords.at(i)));
    poly.validate();
    return poly;
}

json coordinates_from_polygon(const DomainPolygon& poly) {
    auto ring_json = [](const std::vector<Vec2>& ring) {
        json r = json::array();
        for (const auto& v : ring) r.push_back({v.x, v.y});
        r.push_back({ring.front().x, ring.front().y});
        return r;
    };
    json coords = json::array();
    coords.push_back(ring_json(poly.vertices));
    for (const auto& h : poly.holes) coords.push_back(ring_json(h));
    return coords;
}

} // namespace

std::string FileStamp::line() const {
    return "# config=" + config_hash + " seed=" + std::to_string(seed) + "\n";
}

std::string hash_string(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

DomainPolygon read_geojson_polygon(const std::string& path) {
    json j = load_json(path);
    if (j.value("type", "") == "Feature") j = j.at("geometry");
    if (j.value("type", "") == "FeatureCollection") j = j.at("features").at(0).at("geometry");
    if (j.value("type", "") != "Polygon")
        throw io_error(path + ": expected a GeoJSON Polygon geometry");
    return polygon_from_coordinates(j.at("coordinates"));
}

void write_geojson_polygon(const std::string& path, const DomainPolygon& poly,
                           const FileStamp& stamp) {
    json j;
    j["type"] = "Polygon";
    j["coordinates"] = coordinates_from_polygon(poly);
    j["config_hash"] = stamp.config_hash;
    j["seed"] = stamp.seed;
    open_out(path) << j.dump(2) << "\n";
}

std::vector<Region> read_geojson_regions(const std::string& path) {
    json j = load_json(path);
    if (j.value("type", "") != "FeatureCollection")
        throw io_error(path + ": expected a GeoJSON FeatureCollection");
    std::vector<Region> out;
    for (const auto& f : j.at("features")) {
        Region r;
        const auto& props = f.at("properties");
        if (props.contains("id")) {
            const auto& id = props.at("id");
            r.id = id.is_string() ? id.get<std::string>() : id.dump();
        } else {
            r.id = std::to_string(out.size());
        }
        const auto& geom = f.at("geometry");
        if (geom.value("type", "") != "Polygon")
            throw io_error(path + ": region '" + r.id + "' is not a Polygon");
        r.polygon = polygon_from_coordinates(geom.at("coordinates"));
        out.push_back(std::move(r));
    }
    if (out.empty()) throw io_error(path + ": FeatureCollection has no features");
    return out;
}

void write_geojson_regions(const std::string& path, const std::vector<Region>& regions,
                           const FileStamp& stamp) {
    json features = json::array();
    for (const auto& r : regions) {
        json f;
        f["type"] = "Feature";
        f["properties"] = {{"id", r.id}};
        f["geometry"] = {{"type", "Polygon"}, {"coordinates", coordinates_from_polygon(r.polygon)}};
        features.push_back(f);
    }
    json j;
    j["type"] = "FeatureCollection";
    j["features"] = features;
    j["config_hash"] = stamp.config_hash;
    j["seed"] = stamp.seed;
    open_out(path) << j.dump(2) << "\n";
}

void write_mesh_csv(const std::string& nodes_path, const std::string& triangles_path,
                    const Mesh& mesh, const FileStamp& stamp) {
    auto nodes = open_out(nodes_path);
    nodes << stamp.line() << "id,x,y,boundary\n";
    for (std::size_t i = 0; i < mesh.nodes.size(); ++i)
        nodes << i << ',' << fmt(mesh.nodes[i].x) << ',' << fmt(mesh.nodes[i].y) << ','
              << int(mesh.boundary_flags[i]) << '\n';
    auto tris = open_out(triangles_path);
    tris << stamp.line() << "id,n0,n1,n2\n";
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
        tris << t << ',' << mesh.triangles[t][0] << ',' << mesh.triangles[t][1] << ','
             << mesh.triangles[t][2] << '\n';
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open file: " + path);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            std::string got = line;
            if (!got.empty() && got.back() == '\r') got.pop_back();
            if (got != expected_header)
                throw io_error(path + ": expected header '" + expected_header + "', got '" + got +
                               "'");
            header_seen = true;
            continue;
        }
        rows.push_back(split_csv_line(line));
    }
    if (!header_seen) throw io_error(path + ": missing header row");
    return rows;
}

} // namespace

Mesh read_mesh_csv(const std::string& nodes_path, const std::string& triangles_path) {
    Mesh mesh;
    for (const auto& row : read_csv(nodes_path, "id,x,y,boundary")) {
        mesh.nodes.push_back({std::stod(row.at(1)), std::stod(row.at(2))});
        mesh.boundary_flags.push_back(static_cast<std::uint8_t>(std::stoi(row.at(3))));
    }
    for (const auto& row : read_csv(triangles_path, "id,n0,n1,n2"))
        mesh.triangles.push_back(
            {std::stoi(row.at(1)), std::stoi(row.at(2)), std::stoi(row.at(3))});
    return mesh;
}

void write_sample_csv(const std::string& path, const MarkedSample& sample, const FileStamp& stamp) {
    auto out = open_out(path);
    out << stamp.line() << "id,x,y,mark,nind,edu,age,iefp,offset2,p_area,p_dwel\n";
    for (const auto& b : sample.buildings)
        out << b.id << ',' << fmt(b.loc.x) << ',' << fmt(b.loc.y) << ',' << b.mark << ','
            << fmt(b.nind) << ',' << fmt(b.edu) << ',' << fmt(b.age) << ',' << fmt(b.iefp) << ','
            << fmt(b.offset2) << ',' << fmt(b.p_area) << ',' << fmt(b.p_dwel) << '\n';
}

MarkedSample read_sample_csv(const std::string& path) {
    MarkedSample sample;
    for (const auto& row : read_csv(path, "id,x,y,mark,nind,edu,age,iefp,offset2,p_area,p_dwel")) {
        MarkedSample::Building b;
        b.id = std::stol(row.at(0));
        b.loc = {std::stod(row.at(1)), std::stod(row.at(2))};
        b.mark = std::stol(row.at(3));
        b.nind = std::stod(row.at(4));
        b.edu = std::stod(row.at(5));
        b.age = std::stod(row.at(6));
        b.iefp = std::stod(row.at(7));
        b.offset2 = std::stod(row.at(8));
        b.p_area = std::stod(row.at(9));
        b.p_dwel = std::stod(row.at(10));
        sample.buildings.push_back(b);
    }
    sample.validate();
    return sample;
}

void write_population_csv(const std::string& path, const Population& pop, const FileStamp& stamp) {
    auto out = open_out(path);
    out << stamp.line()
        << "id,x,y,stratum,cell,dwellings,people,unemployed,edu_med,age_mean,iefp,lambda2_true\n";
    for (const auto& b : pop.buildings)
        out << b.id << ',' << fmt(b.loc.x) << ',' << fmt(b.loc.y) << ',' << b.stratum << ','
            << b.cell << ',' << b.n_dwellings() << ',' << b.n_people() << ','
            << b.total_unemployed() << ',' << fmt(b.edu_median()) << ',' << fmt(b.age_mean()) << ','
            << fmt(b.iefp) << ',' << fmt(b.lambda2_true) << '\n';
}

void write_surface_csv(const std::string& path, const Surface& surface, const FileStamp& stamp) {
    auto out = open_out(path);
    out << stamp.line();
    out << "# grid x0=" << fmt(surface.grid.x0) << " y0=" << fmt(surface.grid.y0)
        << " cell=" << fmt(surface.grid.cell) << " nx=" << surface.grid.nx
        << " ny=" << surface.grid.ny << " bandwidth=" << fmt(surface.bandwidth)
        << " global_mean=" << fmt(surface.global_mean) << "\n";
    out << "cell_x,cell_y,value,valid_flag\n";
    for (int iy = 0; iy < surface.grid.ny; ++iy)
        for (int ix = 0; ix < surface.grid.nx; ++ix) {
            std::size_t idx = static_cast<std::size_t>(iy) * surface.grid.nx + ix;
            Vec2 c = surface.grid.center(ix, iy);
            out << fmt(c.x) << ',' << fmt(c.y) << ',' << fmt(surface.values[idx]) << ','
                << int(surface.valid[idx]) << '\n';
        }
}

Surface read_surface_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open file: " + path);
    Surface s;
    std::string line;
    bool grid_seen = false, header_seen = false;
    std::vector<std::array<double, 4>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# grid ", 0) == 0) {
            std::istringstream ss(line.substr(7));
            std::string tok;
            while (ss >> tok) {
                auto eq = tok.find('=');
                if (eq == std::string::npos) continue;
                std::string key = tok.substr(0, eq);
                double val = std::stod(tok.substr(eq + 1));
                if (key == "x0") s.grid.x0 = val;
                else if (key == "y0") s.grid.y0 = val;
                else if (key == "cell") s.grid.cell = val;
                else if (key == "nx") s.grid.nx = static_cast<int>(val);
                else if (key == "ny") s.grid.ny = static_cast<int>(val);
                else if (key == "bandwidth") s.bandwidth = val;
                else if (key == "global_mean") s.global_mean = val;
            }
            grid_seen = true;
            continue;
        }
        if (line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true; // column header
            continue;
        }
        auto f = split_csv_line(line);
        rows.push_back({std::stod(f.at(0)), std::stod(f.at(1)), std::stod(f.at(2)),
                        std::stod(f.at(3))});
    }
    if (!grid_seen) throw io_error(path + ": missing '# grid' header");
    if (rows.size() != s.grid.size())
        throw io_error(path + ": surface rows do not match grid dimensions");
    s.values.assign(s.grid.size(), 0.0);
    s.valid.assign(s.grid.size(), 0);
    s.grid.inside.assign(s.grid.size(), 1);
    for (const auto& r : rows) {
        long idx = s.grid.cell_index({r[0], r[1]});
        if (idx < 0) throw io_error(path + ": surface cell outside its own grid");
        s.values[static_cast<std::size_t>(idx)] = r[2];
        s.valid[static_cast<std::size_t>(idx)] = r[3] != 0.0 ? 1 : 0;
    }
    return s;
}

void write_precision_csv(const std::string& path, const Eigen::SparseMatrix<double>& q,
                         const FileStamp& stamp) {
    auto out = open_out(path);
    out << stamp.line() << "row,col,value\n";
    for (int k = 0; k < q.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(q, k); it; ++it)
            out << it.row() << ',' << it.col() << ',' << fmt(it.value()) << '\n';
}

void write_fit_json(const std::string& path, const JointModel& model, const HyperPosterior& hp,
                    const PosteriorDraws& draws, const FileStamp& stamp) {
    json j;
    j["config_hash"] = stamp.config_hash;
    j["seed"] = stamp.seed;
    j["variant"] = variant_to_string(model.variant);
    j["n_nodes"] = model.n_nodes;
    j["n_fields"] = model.n_fields;
    j["n_draws"] = draws.n_draws();
    j["n_failed_grid_points"] = hp.n_failed;

    json grid = json::array();
    for (const auto& p : hp.points) {
        json g;
        json fields = json::array();
        for (const auto& f : p.hyper.fields)
            fields.push_back({{"log_rho", f.log_rho}, {"log_sigma", f.log_sigma}});
        g["fields"] = fields;
        if (p.hyper.field_scale) g["field_scale"] = *p.hyper.field_scale;
        g["log_post"] = p.log_post;
        g["weight"] = p.weight;
        g["newton_iterations"] = p.iterations;
        grid.push_back(g);
    }
    j["hyper_grid"] = grid;

    json fixed = json::array();
    for (std::size_t i = 0; i < model.fixed_names.size(); ++i) {
        CoordSummary s = summarize_coordinate(draws, model.fixed_offset() + i);
        fixed.push_back({{"name", model.fixed_names[i]},
                         {"mean", s.mean},
                         {"sd", s.sd},
                         {"q025", s.q025},
                         {"q975", s.q975}});
    }
    j["fixed_effects"] = fixed;
    open_out(path) << j.dump(2) << "\n";
}

void write_draws_bin(const std::string& path, const PosteriorDraws& draws) {
    auto out = open_out(path);
    const char magic[8] = {'C', 'X', 'M', 'K', 'D', 'R', 'A', 'W'};
    std::uint16_t version = 1;
    std::uint32_t n = static_cast<std::uint32_t>(draws.latent.rows());
    std::uint16_t dim = static_cast<std::uint16_t>(draws.latent.cols());
    out.write(magic, 8);
    out.write(reinterpret_cast<const char*>(&version), 2);
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(&dim), 2);
    for (Eigen::Index r = 0; r < draws.latent.rows(); ++r)
        for (Eigen::Index c = 0; c < draws.latent.cols(); ++c) {
            double v = draws.latent(r, c);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
}

Eigen::MatrixXd read_draws_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "CXMKDRAW", 8) != 0) throw io_error(path + ": bad draws magic");
    std::uint16_t version = 0, dim = 0;
    std::uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&version), 2);
    in.read(reinterpret_cast<char*>(&n), 4);
    in.read(reinterpret_cast<char*>(&dim), 2);
    if (version != 1) throw io_error(path + ": unsupported draws version");
    Eigen::MatrixXd m(n, dim);
    for (std::uint32_t r = 0; r < n; ++r)
        for (std::uint16_t c = 0; c < dim; ++c) {
            double v;
            in.read(reinterpret_cast<char*>(&v), 8);
            m(r, c) = v;
        }
    if (!in) throw io_error(path + ": truncated draws file");
    return m;
}

void write_estimates_csv(const std::string& path, const std::vector<AreaEstimate>& estimates,
                         const FileStamp& stamp) {
    auto out = open_out(path);
    out << stamp.line()
        << "region_id,mean,sd_between,sd_total,cv,lo95,hi95,direct_total,direct_sd,sd_ratio,"
           "covered\n";
    for (const auto& e : estimates) {
        out << e.region_id << ',' << fmt(e.mean) << ',' << fmt(std::sqrt(e.var_between)) << ','
            << fmt(std::sqrt(e.var_total)) << ',' << fmt(e.cv) << ',' << fmt(e.lo95) << ','
            << fmt(e.hi95) << ',';
        if (e.direct_total) {
            double dsd = e.direct_sd.value_or(0.0);
            double ratio = e.var_between > 0.0 ? dsd / std::sqrt(e.var_between) : 0.0;
            bool covered = *e.direct_total >= e.lo95 && *e.direct_total <= e.hi95;
            out << fmt(*e.direct_total) << ',' << fmt(dsd) << ',' << fmt(ratio) << ','
                << (covered ? 1 : 0);
        } else {
            out << ",,,";
        }
        out << '\n';
    }
}

void write_intensity_grid_csv(const std::string& path, const PixelField& field,
                              const FileStamp& stamp) {
    auto out = open_out(path);
    out << stamp.line()
        << "cell_x,cell_y,mean_log_lambda1,sd_log_lambda1,mean_log_lambda2,sd_log_lambda2,"
           "mean_intensity,sd_intensity\n";
    const std::size_t n_draws = static_cast<std::size_t>(field.lambda1.rows());
    for (std::size_t p = 0; p < field.cells.size(); ++p) {
        long c = field.cells[p];
        Vec2 center = field.grid.center(static_cast<int>(c % field.grid.nx),
                                        static_cast<int>(c / field.grid.nx));
        double m1 = 0.0, m2 = 0.0, mi = 0.0;
        for (std::size_t k = 0; k < n_draws; ++k) {
            double l1 = field.lambda1(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            double l2 = field.lambda2(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            m1 += std::log(l1);
            m2 += std::log(l2);
            mi += l1 * l2;
        }
        m1 /= static_cast<double>(n_draws);
        m2 /= static_cast<double>(n_draws);
        mi /= static_cast<double>(n_draws);
        double v1 = 0.0, v2 = 0.0, vi = 0.0;
        for (std::size_t k = 0; k < n_draws; ++k) {
            double l1 = field.lambda1(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            double l2 = field.lambda2(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            v1 += (std::log(l1) - m1) * (std::log(l1) - m1);
            v2 += (std::log(l2) - m2) * (std::log(l2) - m2);
            vi += (l1 * l2 - mi) * (l1 * l2 - mi);
        }
        double den = n_draws > 1 ? static_cast<double>(n_draws - 1) : 1.0;
        out << fmt(center.x) << ',' << fmt(center.y) << ',' << fmt(m1) << ','
            << fmt(std::sqrt(v1 / den)) << ',' << fmt(m2) << ',' << fmt(std::sqrt(v2 / den)) << ','
            << fmt(mi) << ',' << fmt(std::sqrt(vi / den)) << '\n';
    }
}

} // namespace coxmark
