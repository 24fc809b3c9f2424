#include "csir/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "csir/common.hpp"

namespace csir {

namespace {

// Columns x1..xp (or z1..zq) must be present as a contiguous 1-based run.
std::vector<std::size_t> indexed_columns(const Table& t, const std::string& prefix) {
    std::vector<std::size_t> cols;
    for (std::size_t k = 1;; ++k) {
        auto idx = t.find(prefix + std::to_string(k));
        if (!idx) break;
        cols.push_back(*idx);
    }
    return cols;
}

}  // namespace

const UnitRecord* Dataset::find_unit(const std::string& unit_id) const {
    for (const auto& u : units)
        if (u.unit_id == unit_id) return &u;
    return nullptr;
}

std::size_t Dataset::index_of(const std::string& unit_id) const {
    for (std::size_t i = 0; i < units.size(); ++i)
        if (units[i].unit_id == unit_id) return i;
    throw ValidationError("unknown unit id '" + unit_id + "'");
}

LoadResult load_units(std::istream& in, char delimiter, CoordKind coord_kind) {
    const Table t = read_table(in, delimiter);
    const std::size_t c_unit = t.require("unit_id");
    const std::size_t c_county = t.require("county_id");
    const std::size_t c_pop = t.require("population");
    const auto c_exposure = t.find("exposure");
    const auto c_y = t.find("y");
    const auto x_cols = indexed_columns(t, "x");
    const auto z_cols = indexed_columns(t, "z");
    const auto c_lat = t.find("lat");
    const auto c_lon = t.find("lon");
    if (c_lat.has_value() != c_lon.has_value())
        throw ValidationError("lat and lon columns must appear together");

    LoadResult result;
    Dataset& ds = result.dataset;
    ds.n_confounders = x_cols.size();
    ds.n_extras = z_cols.size();
    for (std::size_t k = 1; k <= x_cols.size(); ++k) ds.confounder_names.push_back("x" + std::to_string(k));
    for (std::size_t k = 1; k <= z_cols.size(); ++k) ds.extra_names.push_back("z" + std::to_string(k));

    std::unordered_set<std::string> seen_ids;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::size_t rowno = r + 1;
        UnitRecord u;
        u.unit_id = t.cell(r, c_unit);
        if (u.unit_id.empty()) {
            result.diagnostics.push_back({rowno, "rejected: empty unit_id"});
            continue;
        }
        if (!seen_ids.insert(u.unit_id).second)
            throw ValidationError("duplicate unit_id '" + u.unit_id + "' at row " +
                                  std::to_string(rowno));
        u.county_id = t.cell(r, c_county);

        try {
            u.population = parse_count(t.cell(r, c_pop), rowno, "population");
            if (c_exposure && !is_blank(t.cell(r, *c_exposure))) {
                const long long e = parse_count(t.cell(r, *c_exposure), rowno, "exposure");
                if (e != 0 && e != 1)
                    throw ValidationError("row " + std::to_string(rowno) +
                                          ": exposure must be 0, 1, or blank");
                u.exposure = static_cast<int>(e);
            }
            if (c_y && !is_blank(t.cell(r, *c_y)))
                u.observed_count = parse_count(t.cell(r, *c_y), rowno, "y");
            u.confounders.reserve(x_cols.size());
            for (std::size_t k = 0; k < x_cols.size(); ++k)
                u.confounders.push_back(
                    parse_double(t.cell(r, x_cols[k]), rowno, "x" + std::to_string(k + 1)));
            u.covariate_extras.reserve(z_cols.size());
            for (std::size_t k = 0; k < z_cols.size(); ++k)
                u.covariate_extras.push_back(
                    parse_double(t.cell(r, z_cols[k]), rowno, "z" + std::to_string(k + 1)));
            if (c_lat && !is_blank(t.cell(r, *c_lat)) && !is_blank(t.cell(r, *c_lon))) {
                Coordinate coord;
                coord.kind = coord_kind;
                coord.y = parse_double(t.cell(r, *c_lat), rowno, "lat");
                coord.x = parse_double(t.cell(r, *c_lon), rowno, "lon");
                if (!std::isfinite(coord.x) || !std::isfinite(coord.y))
                    throw ValidationError("row " + std::to_string(rowno) +
                                          ": non-finite coordinate");
                u.centroid = coord;
            }
            for (double v : u.confounders)
                if (!std::isfinite(v))
                    throw ValidationError("row " + std::to_string(rowno) +
                                          ": non-finite confounder value");
            for (double v : u.covariate_extras)
                if (!std::isfinite(v))
                    throw ValidationError("row " + std::to_string(rowno) +
                                          ": non-finite predictor value");
        } catch (const ValidationError& e) {
            seen_ids.erase(u.unit_id);
            result.diagnostics.push_back({rowno, std::string("rejected: ") + e.what()});
            continue;
        }

        if (u.population == 0)
            result.diagnostics.push_back(
                {rowno, "unit '" + u.unit_id + "' has population 0; excluded from model fitting"});
        ds.units.push_back(std::move(u));
    }
    return result;
}

LoadResult load_units_file(const std::string& path, char delimiter, CoordKind coord_kind) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    try {
        return load_units(in, delimiter, coord_kind);
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

void write_units(std::ostream& out, const Dataset& dataset, char delimiter) {
    Table t;
    t.columns = {"unit_id", "county_id", "population", "exposure", "y"};
    for (std::size_t k = 1; k <= dataset.n_confounders; ++k)
        t.columns.push_back("x" + std::to_string(k));
    for (std::size_t k = 1; k <= dataset.n_extras; ++k)
        t.columns.push_back("z" + std::to_string(k));
    const bool any_coord =
        std::any_of(dataset.units.begin(), dataset.units.end(),
                    [](const UnitRecord& u) { return u.centroid.has_value(); });
    if (any_coord) {
        t.columns.push_back("lat");
        t.columns.push_back("lon");
    }
    for (const auto& u : dataset.units) {
        std::vector<std::string> row;
        row.push_back(u.unit_id);
        row.push_back(u.county_id);
        row.push_back(std::to_string(u.population));
        row.push_back(u.exposure ? std::to_string(*u.exposure) : "");
        row.push_back(u.observed_count ? std::to_string(*u.observed_count) : "");
        for (double v : u.confounders) row.push_back(format_double(v));
        for (double v : u.covariate_extras) row.push_back(format_double(v));
        if (any_coord) {
            row.push_back(u.centroid ? format_double(u.centroid->y) : "");
            row.push_back(u.centroid ? format_double(u.centroid->x) : "");
        }
        t.rows.push_back(std::move(row));
    }
    write_table(out, t, delimiter);
}

void write_units_file(const std::string& path, const Dataset& dataset, char delimiter) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    write_units(out, dataset, delimiter);
}

std::map<std::string, long long> load_county_totals_file(const std::string& path,
                                                         char delimiter) {
    const Table t = read_table_file(path, delimiter);
    const std::size_t c_id = t.require("county_id");
    const std::size_t c_total = t.require("total");
    std::map<std::string, long long> totals;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& id = t.cell(r, c_id);
        if (!totals.emplace(id, parse_count(t.cell(r, c_total), r + 1, "total")).second)
            throw ValidationError(path + ": duplicate county_id '" + id + "'");
    }
    return totals;
}

std::vector<PointSource> load_sources_file(const std::string& path, char delimiter,
                                           CoordKind coord_kind) {
    const Table t = read_table_file(path, delimiter);
    const std::size_t c_id = t.require("source_id");
    const std::size_t c_lat = t.require("lat");
    const std::size_t c_lon = t.require("lon");
    const auto c_active = t.find("active");
    std::vector<PointSource> sources;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        PointSource s;
        s.source_id = t.cell(r, c_id);
        s.location.kind = coord_kind;
        s.location.y = parse_double(t.cell(r, c_lat), r + 1, "lat");
        s.location.x = parse_double(t.cell(r, c_lon), r + 1, "lon");
        if (!std::isfinite(s.location.x) || !std::isfinite(s.location.y))
            throw ValidationError(path + ": non-finite coordinate at row " + std::to_string(r + 1));
        s.active = true;
        if (c_active) s.active = parse_count(t.cell(r, *c_active), r + 1, "active") != 0;
        sources.push_back(std::move(s));
    }
    return sources;
}

GroupResult group_by_county(const Dataset& dataset,
                            const std::map<std::string, long long>& county_totals) {
    std::map<std::string, std::vector<std::size_t>> by_county;
    for (std::size_t i = 0; i < dataset.units.size(); ++i)
        by_county[dataset.units[i].county_id].push_back(i);

    std::vector<std::string> missing;
    for (const auto& [county, members] : by_county)
        if (!county_totals.count(county)) missing.push_back(county);
    if (!missing.empty()) {
        std::string msg = "counties without totals:";
        for (const auto& c : missing) msg += " '" + c + "'";
        throw ValidationError(msg);
    }

    GroupResult result;
    for (auto& [county, members] : by_county) {
        std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            return dataset.units[a].unit_id < dataset.units[b].unit_id;
        });
        CountyGroup g;
        g.county_id = county;
        g.member_indices = members;
        g.county_total = county_totals.at(county);

        bool all_observed = true;
        long long sum = 0;
        for (std::size_t i : members) {
            if (!dataset.units[i].observed_count) {
                all_observed = false;
                break;
            }
            sum += *dataset.units[i].observed_count;
        }
        if (all_observed && sum != g.county_total)
            result.diagnostics.push_back(
                {0, "county '" + county + "': member counts sum to " + std::to_string(sum) +
                        " but county total is " + std::to_string(g.county_total)});
        result.groups.push_back(std::move(g));
    }
    return result;
}

double distance_miles(const Coordinate& a, const Coordinate& b) {
    if (a.kind != b.kind)
        throw ValidationError("mixed coordinate conventions (geodetic vs planar)");
    if (a.kind == CoordKind::planar) return std::hypot(a.x - b.x, a.y - b.y);

    constexpr double earth_radius_miles = 3958.7613;
    constexpr double deg = std::numbers::pi / 180.0;
    const double lat1 = a.y * deg, lat2 = b.y * deg;
    const double dlat = (b.y - a.y) * deg, dlon = (b.x - a.x) * deg;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1) * std::cos(lat2) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * earth_radius_miles * std::asin(std::min(1.0, std::sqrt(h)));
}

void classify_exposure(Dataset& dataset, const std::vector<PointSource>& sources,
                       double radius_miles, const ContainmentMap* containment) {
    if (!(radius_miles > 0.0)) throw ValidationError("radius must be positive");
    for (auto& u : dataset.units) {
        bool exposed = false;
        if (containment) {
            auto it = containment->find(u.unit_id);
            if (it != containment->end()) {
                for (const auto& sid : it->second) {
                    const auto src = std::find_if(sources.begin(), sources.end(),
                                                  [&](const PointSource& s) {
                                                      return s.source_id == sid && s.active;
                                                  });
                    if (src != sources.end()) {
                        exposed = true;
                        break;
                    }
                }
            }
        }
        if (!exposed && u.centroid) {
            for (const auto& s : sources) {
                if (!s.active) continue;
                if (distance_miles(*u.centroid, s.location) <= radius_miles) {
                    exposed = true;
                    break;
                }
            }
        }
        u.exposure = exposed ? 1 : 0;
    }
}

}  // namespace csir
