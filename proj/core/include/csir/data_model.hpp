#pragma once

// Core domain types, unit-table ingestion with row-level validation, and
// geometric exposure classification around point-source hazards.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csir/table.hpp"

namespace csir {

enum class CoordKind { geodetic, planar };

struct Coordinate {
    double x = 0.0;  // longitude (degrees) or planar x (miles)
    double y = 0.0;  // latitude (degrees) or planar y (miles)
    CoordKind kind = CoordKind::geodetic;
};

/// One small areal unit (census block group or similar).
struct UnitRecord {
    std::string unit_id;
    std::string county_id;
    long long population = 0;                   // person-count or person-time, P
    std::optional<int> exposure;                // T in {0,1}; unset until classified
    std::vector<double> confounders;            // X, length p
    std::vector<double> covariate_extras;       // Z beyond X, length q
    std::optional<long long> observed_count;    // Y
    std::optional<Coordinate> centroid;
};

/// Units sharing a county plus that county's observed total count K.
struct CountyGroup {
    std::string county_id;
    std::vector<std::size_t> member_indices;  // into the owning dataset, sorted by unit_id
    long long county_total = 0;               // K
};

struct PointSource {
    std::string source_id;
    Coordinate location;
    bool active = true;
};

struct RowDiagnostic {
    std::size_t row = 0;  // 1-based data row; 0 for dataset-level notes
    std::string message;
};

struct Dataset {
    std::vector<UnitRecord> units;
    std::size_t n_confounders = 0;       // p
    std::size_t n_extras = 0;            // q
    std::vector<std::string> confounder_names;
    std::vector<std::string> extra_names;

    const UnitRecord* find_unit(const std::string& unit_id) const;
    std::size_t index_of(const std::string& unit_id) const;  // ValidationError if absent
};

struct LoadResult {
    Dataset dataset;
    std::vector<RowDiagnostic> diagnostics;  // rejected rows and advisories
};

/// Read a unit table. Expected columns: unit_id, county_id, population,
/// exposure (0/1 or blank), y (blank allowed), x1..xp, z1..zq, optional
/// lat/lon. Rows violating record invariants are rejected with row-indexed
/// diagnostics; duplicate unit ids are a hard error.
LoadResult load_units(std::istream& in, char delimiter = ',',
                      CoordKind coord_kind = CoordKind::geodetic);
LoadResult load_units_file(const std::string& path, char delimiter = ',',
                           CoordKind coord_kind = CoordKind::geodetic);

/// Write a unit table that load_units reads back bit-exactly.
void write_units(std::ostream& out, const Dataset& dataset, char delimiter = ',');
void write_units_file(const std::string& path, const Dataset& dataset, char delimiter = ',');

/// County totals table: county_id, total.
std::map<std::string, long long> load_county_totals_file(const std::string& path,
                                                         char delimiter = ',');

/// Point sources table: source_id, lat, lon, active (0/1).
std::vector<PointSource> load_sources_file(const std::string& path, char delimiter = ',',
                                           CoordKind coord_kind = CoordKind::geodetic);

struct GroupResult {
    std::vector<CountyGroup> groups;  // sorted by county_id
    std::vector<RowDiagnostic> diagnostics;
};

/// Partition units into county groups with the observed county totals.
/// Counties missing from `county_totals` are a ValidationError listing them.
/// A county whose members all carry observed counts that do not sum to its
/// total gets a warning diagnostic (partially observed counties are fine).
GroupResult group_by_county(const Dataset& dataset,
                            const std::map<std::string, long long>& county_totals);

/// Distance in miles. Great-circle (haversine, radius 3958.7613 mi) for
/// geodetic coordinates, Euclidean for planar. Mixing kinds is an error.
double distance_miles(const Coordinate& a, const Coordinate& b);

/// Source ids located inside a unit's polygon, for callers that computed
/// polygon containment externally.
using ContainmentMap = std::map<std::string, std::vector<std::string>>;

/// Set exposure = 1 iff an active source lies within `radius_miles` of the
/// unit centroid, or inside the unit polygon per `containment`; 0 otherwise.
/// Units without a centroid are only classifiable through `containment`.
void classify_exposure(Dataset& dataset, const std::vector<PointSource>& sources,
                       double radius_miles, const ContainmentMap* containment = nullptr);

}  // namespace csir
