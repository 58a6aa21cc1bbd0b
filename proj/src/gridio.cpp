#include "dsr/gridio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "dsr/errors.hpp"

namespace dsr {

int GridField::var_index(const std::string& name) const {
    for (size_t i = 0; i < variables.size(); ++i)
        if (variables[i] == name) return static_cast<int>(i);
    return -1;
}

void GridField::validate() const {
    if (variables.empty() || T <= 0 || H <= 0 || W <= 0)
        throw ConfigError("GridField has empty extents");
    if (data.size() != static_cast<size_t>(n_var()) * T * H * W)
        throw ConfigError("GridField data length does not match extents");
    if (dlat == 0.0 || dlon == 0.0) throw ConfigError("GridField dlat/dlon must be nonzero");
    if (dt == 0) throw ConfigError("GridField dt must be positive");
    std::set<std::string> uniq(variables.begin(), variables.end());
    if (uniq.size() != variables.size())
        throw ConfigError("GridField variable names must be unique");
}

namespace {

template <typename T>
void put(std::string& buf, T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));  // little-endian host assumed (x86/arm64)
}

template <typename T>
T take(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

}  // namespace

void write_grid(const GridField& g, const std::string& path) {
    g.validate();
    std::string buf;
    buf.reserve(kGrdFixedHeaderBytes + g.variables.size() * kGrdNameBytes +
                g.data.size() * sizeof(float));
    buf.append("GRD1", 4);
    put<uint32_t>(buf, 1);
    put<uint32_t>(buf, static_cast<uint32_t>(g.n_var()));
    put<uint32_t>(buf, static_cast<uint32_t>(g.T));
    put<uint32_t>(buf, static_cast<uint32_t>(g.H));
    put<uint32_t>(buf, static_cast<uint32_t>(g.W));
    put<double>(buf, g.lat0);
    put<double>(buf, g.lon0);
    put<double>(buf, g.dlat);
    put<double>(buf, g.dlon);
    put<int64_t>(buf, g.t0);
    put<uint32_t>(buf, g.dt);
    put<uint32_t>(buf, 0);  // pad
    for (const auto& name : g.variables) {
        if (name.size() > kGrdNameBytes)
            throw ConfigError("variable name longer than 16 bytes: " + name);
        char nm[kGrdNameBytes] = {0};
        std::memcpy(nm, name.data(), name.size());
        buf.append(nm, kGrdNameBytes);
    }
    buf.append(reinterpret_cast<const char*>(g.data.data()), g.data.size() * sizeof(float));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

GridField read_grid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < kGrdFixedHeaderBytes) throw IoError("truncated header: " + path);
    if (std::memcmp(buf.data(), "GRD1", 4) != 0)
        throw FormatError("bad magic in " + path);
    const char* p = buf.data() + 4;
    uint32_t version = take<uint32_t>(p);
    p += 4;
    if (version != 1) throw FormatError("unsupported GRD version " + std::to_string(version));

    GridField g;
    uint32_t n_var = take<uint32_t>(p); p += 4;
    g.T = static_cast<int>(take<uint32_t>(p)); p += 4;
    g.H = static_cast<int>(take<uint32_t>(p)); p += 4;
    g.W = static_cast<int>(take<uint32_t>(p)); p += 4;
    g.lat0 = take<double>(p); p += 8;
    g.lon0 = take<double>(p); p += 8;
    g.dlat = take<double>(p); p += 8;
    g.dlon = take<double>(p); p += 8;
    g.t0 = take<int64_t>(p); p += 8;
    g.dt = take<uint32_t>(p); p += 8;  // dt + pad

    size_t name_bytes = static_cast<size_t>(n_var) * kGrdNameBytes;
    size_t payload = static_cast<size_t>(n_var) * g.T * g.H * g.W * sizeof(float);
    size_t expected = kGrdFixedHeaderBytes + name_bytes + payload;
    if (buf.size() < kGrdFixedHeaderBytes + name_bytes)
        throw IoError("truncated name table: " + path);
    if (buf.size() < expected) throw IoError("truncated payload: " + path);
    if (buf.size() > expected)
        throw CorruptionError("payload size mismatch vs header: " + path);

    for (uint32_t v = 0; v < n_var; ++v) {
        const char* nm = buf.data() + kGrdFixedHeaderBytes + v * kGrdNameBytes;
        size_t len = strnlen(nm, kGrdNameBytes);
        g.variables.emplace_back(nm, len);
    }
    g.data.resize(payload / sizeof(float));
    std::memcpy(g.data.data(), buf.data() + kGrdFixedHeaderBytes + name_bytes, payload);
    g.validate();
    return g;
}

int64_t parse_iso8601_utc(const std::string& s) {
    std::tm tm{};
    int y, mo, d, h, mi, sec;
    char z = 0;
    int n = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d%c", &y, &mo, &d, &h, &mi, &sec, &z);
    if (n < 6 || (n == 7 && z != 'Z'))
        throw FormatError("unparseable ISO-8601 time: " + s);
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = sec;
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60)
        throw FormatError("out-of-range ISO-8601 field: " + s);
    return static_cast<int64_t>(timegm(&tm));
}

std::string format_iso8601_utc(int64_t t) {
    std::time_t tt = static_cast<std::time_t>(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

std::vector<StationRecord> read_stations(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw SchemaError("empty station file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "station_id,lat,lon,valid_time,variable,value")
        throw SchemaError("unexpected station CSV header: " + line);

    std::vector<StationRecord> out;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 6) throw RowError(lineno, "expected 6 columns");
        StationRecord r;
        r.station_id = cols[0];
        try {
            size_t pos = 0;
            r.lat = std::stod(cols[1], &pos);
            if (pos != cols[1].size()) throw std::invalid_argument("lat");
            r.lon = std::stod(cols[2], &pos);
            if (pos != cols[2].size()) throw std::invalid_argument("lon");
            r.valid_time = parse_iso8601_utc(cols[3]);
            r.variable = cols[4];
            r.value = std::stod(cols[5], &pos);
            if (pos != cols[5].size()) throw std::invalid_argument("value");
        } catch (const FormatError& e) {
            throw RowError(lineno, e.what());
        } catch (const std::exception&) {
            throw RowError(lineno, "unparseable number in: " + line);
        }
        if (r.lat < -90.0 || r.lat > 90.0)
            throw RowError(lineno, "latitude out of [-90,90]");
        if (r.lon < -180.0 || r.lon >= 360.0)
            throw RowError(lineno, "longitude out of [-180,360)");
        out.push_back(std::move(r));
    }
    return out;
}

float sample_nearest(const GridField& g, const std::string& var, double lat,
                     double lon, int64_t time) {
    int v = g.var_index(var);
    if (v < 0) throw RangeError("no such variable: " + var);
    if (time < g.t0 || time > g.t0 + static_cast<int64_t>(g.T - 1) * g.dt)
        throw RangeError("time outside grid range");
    // nearest frame
    double ft = static_cast<double>(time - g.t0) / g.dt;
    int t = static_cast<int>(std::lround(ft));
    t = std::clamp(t, 0, g.T - 1);
    // nearest row/col; planar degrees metric, grid axes are independent
    double fi = (lat - g.lat0) / g.dlat;
    double fj = (lon - g.lon0) / g.dlon;
    if (fi < -0.5 || fi > g.H - 0.5 || fj < -0.5 || fj > g.W - 0.5)
        throw RangeError("location outside grid bounds");
    int i = std::clamp(static_cast<int>(std::lround(fi)), 0, g.H - 1);
    int j = std::clamp(static_cast<int>(std::lround(fj)), 0, g.W - 1);
    return g.at(v, t, i, j);
}

}  // namespace dsr
