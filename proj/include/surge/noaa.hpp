#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "surge/data.hpp"
#include "surge/hash.hpp"
#include "surge/time.hpp"

namespace surge {

// Client for the public tides-and-currents data API: hourly water levels and
// harmonic tide predictions at one station, MSL datum, metric units, GMT.

enum class TideProduct { HourlyHeight, Predictions };

inline const char* product_name(TideProduct p) {
  return p == TideProduct::HourlyHeight ? "hourly_height" : "predictions";
}

struct StationQuery {
  std::string station_id = "8726520";  // St. Petersburg, FL
  UtcTime begin = 0;
  UtcTime end = 0;  // exclusive, hour-aligned
  TideProduct product = TideProduct::HourlyHeight;

  void validate() const {
    if (begin % kSecondsPerHour != 0 || end % kSecondsPerHour != 0) {
      throw config_error("station query: begin/end must be hour-aligned");
    }
    if (begin >= end) {
      throw config_error("station query: begin " + format_utc(begin) + " is not before end " +
                         format_utc(end));
    }
    if (station_id.empty()) throw config_error("station query: empty station id");
  }

  // canonical form hashed into the cache fingerprint
  std::string normalized() const {
    return "station=" + station_id + "&product=" + product_name(product) +
           "&datum=MSL&units=metric&time_zone=gmt&begin=" + format_utc(begin) +
           "&end=" + format_utc(end);
  }

  std::string fingerprint() const { return sha256_hex(normalized()); }

  // request target; begin_date/end_date are inclusive hour stamps
  std::string path_query() const {
    std::string b = format_noaa(begin);
    std::string e = format_noaa(end - kSecondsPerHour);
    for (auto* s : {&b, &e}) {
      auto pos = s->find(' ');
      s->replace(pos, 1, "%20");
    }
    std::string q = "/api/prod/datagetter?begin_date=" + b + "&end_date=" + e +
                    "&station=" + station_id + "&product=" + product_name(product) +
                    "&datum=MSL&units=metric&time_zone=gmt&format=json&application=surge-toolkit";
    if (product == TideProduct::Predictions) q += "&interval=h";
    return q;
  }
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class HttpTransport {
public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse get(const std::string& path_query) = 0;
};

// ---- on-disk payload cache ----
//
// <fingerprint>.payload.json holds the raw API response; <fingerprint>.meta.json
// records the normalized query, the payload's sha256 and the fetch time.
// Writes go through a temp file + rename; entries are immutable afterwards.

class CacheStore {
public:
  explicit CacheStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::optional<std::string> lookup(const std::string& fingerprint) const {
    const auto p = payload_path(fingerprint);
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  void store(const std::string& fingerprint, const std::string& normalized_query,
             const std::string& payload, UtcTime fetched_at) const {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw io_error("cannot create cache dir " + dir_.string() + ": " + ec.message());
    write_atomic(payload_path(fingerprint), payload);
    nlohmann::json meta;
    meta["fingerprint"] = fingerprint;
    meta["query"] = normalized_query;
    meta["payload_sha256"] = sha256_hex(payload);
    meta["fetched_at"] = format_utc(fetched_at);
    write_atomic(meta_path(fingerprint), meta.dump(2) + "\n");
  }

  struct Entry {
    std::string fingerprint;
    std::string query;
    std::string payload_sha256;
    std::string fetched_at;
    std::uintmax_t payload_bytes = 0;
    bool payload_present = false;
  };

  std::vector<Entry> list() const {
    std::vector<Entry> out;
    if (!std::filesystem::exists(dir_)) return out;
    std::vector<std::filesystem::path> metas;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      if (e.path().extension() == ".json" &&
          e.path().stem().string().ends_with(".meta")) {
        metas.push_back(e.path());
      }
    }
    std::sort(metas.begin(), metas.end());
    for (const auto& m : metas) {
      std::ifstream in(m, std::ios::binary);
      if (!in) throw io_error("unreadable cache entry " + m.string());
      nlohmann::json j;
      try {
        in >> j;
      } catch (const std::exception& e) {
        throw io_error("corrupt cache meta " + m.string() + ": " + e.what());
      }
      Entry entry;
      entry.fingerprint = j.value("fingerprint", "");
      entry.query = j.value("query", "");
      entry.payload_sha256 = j.value("payload_sha256", "");
      entry.fetched_at = j.value("fetched_at", "");
      const auto p = payload_path(entry.fingerprint);
      entry.payload_present = std::filesystem::exists(p);
      if (entry.payload_present) entry.payload_bytes = std::filesystem::file_size(p);
      out.push_back(std::move(entry));
    }
    return out;
  }

  std::size_t clear() const {
    if (!std::filesystem::exists(dir_)) return 0;
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      if (e.path().extension() == ".json") {
        std::filesystem::remove(e.path());
        ++n;
      }
    }
    return n;
  }

  struct VerifyReport {
    std::size_t entries = 0;
    std::vector<std::string> corrupted;  // payload hash mismatch
    std::vector<std::string> missing;    // payload file absent
    bool ok() const { return corrupted.empty() && missing.empty(); }
  };

  VerifyReport verify() const {
    VerifyReport report;
    for (const auto& entry : list()) {
      ++report.entries;
      if (!entry.payload_present) {
        report.missing.push_back(entry.fingerprint);
        continue;
      }
      const auto payload = lookup(entry.fingerprint);
      if (!payload || sha256_hex(*payload) != entry.payload_sha256) {
        report.corrupted.push_back(entry.fingerprint);
      }
    }
    return report;
  }

private:
  std::filesystem::path payload_path(const std::string& fp) const {
    return dir_ / (fp + ".payload.json");
  }
  std::filesystem::path meta_path(const std::string& fp) const {
    return dir_ / (fp + ".meta.json");
  }

  static void write_atomic(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw io_error("cannot write " + tmp);
      out << content;
      if (!out) throw io_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  std::filesystem::path dir_;
};

// ---- client ----

struct NoaaClientOptions {
  int max_attempts = 3;
  int chunk_days = 30;
  int backoff_initial_ms = 500;
  std::function<void(int)> sleep_ms = nullptr;  // injectable for tests
  std::function<UtcTime()> clock = nullptr;     // fetch timestamps for cache metadata
};

class NoaaClient {
public:
  NoaaClient(HttpTransport& transport, CacheStore cache, NoaaClientOptions opts = {})
      : transport_(transport), cache_(std::move(cache)), opts_(std::move(opts)) {}

  GaugeSeries fetch_gauge(const StationQuery& q) {
    StationQuery query = q;
    query.product = TideProduct::HourlyHeight;
    GaugeSeries out;
    out.station_id = query.station_id;
    out.series = build_hourly_series(fetch_points(query));
    return out;
  }

  HarmonicSeries fetch_predictions(const StationQuery& q) {
    StationQuery query = q;
    query.product = TideProduct::Predictions;
    HarmonicSeries out;
    out.station_id = query.station_id;
    out.series = build_hourly_series(fetch_points(query));
    return out;
  }

private:
  std::vector<std::pair<UtcTime, double>> fetch_points(const StationQuery& q) {
    q.validate();
    std::vector<std::pair<UtcTime, double>> points;
    const std::int64_t chunk_hours = static_cast<std::int64_t>(opts_.chunk_days) * 24;
    for (UtcTime b = q.begin; b < q.end; b += chunk_hours * kSecondsPerHour) {
      StationQuery chunk = q;
      chunk.begin = b;
      chunk.end = std::min(q.end, b + chunk_hours * kSecondsPerHour);
      const std::string payload = fetch_payload(chunk);
      parse_points(payload, chunk, points);
    }
    if (points.empty()) {
      throw data_error("no data returned for " + q.normalized());
    }
    return points;
  }

  std::string fetch_payload(const StationQuery& chunk) {
    const std::string fp = chunk.fingerprint();
    if (auto cached = cache_.lookup(fp)) return *cached;
    const std::string target = chunk.path_query();
    std::string last_error;
    for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
      if (attempt > 1) {
        const int delay = opts_.backoff_initial_ms << (attempt - 2);
        if (opts_.sleep_ms) opts_.sleep_ms(delay);
      }
      HttpResponse resp;
      try {
        resp = transport_.get(target);
      } catch (const std::exception& e) {
        last_error = e.what();
        continue;
      }
      if (resp.status == 200) {
        const UtcTime now = opts_.clock ? opts_.clock() : 0;
        cache_.store(fp, chunk.normalized(), resp.body, now);
        return resp.body;
      }
      last_error = "HTTP status " + std::to_string(resp.status);
      if (resp.status >= 400 && resp.status < 500) break;  // no point retrying
    }
    throw transport_error("fetch failed after " + std::to_string(opts_.max_attempts) +
                          " attempts for " + chunk.normalized() + ": " + last_error);
  }

  // Accepts {"data":[{t,v,...}]} (hourly_height) and {"predictions":[{t,v}]}.
  // Rows with an empty value are gaps and are skipped.
  static void parse_points(const std::string& payload, const StationQuery& chunk,
                           std::vector<std::pair<UtcTime, double>>& out) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(payload);
    } catch (const std::exception& e) {
      throw parse_error("malformed payload for " + chunk.normalized() + ": " + e.what());
    }
    if (j.contains("error")) {
      const std::string msg = j["error"].value("message", "unknown error");
      throw data_error("no data for " + chunk.normalized() + ": " + msg);
    }
    const char* key = chunk.product == TideProduct::HourlyHeight ? "data" : "predictions";
    if (!j.contains(key) || !j[key].is_array()) {
      throw parse_error("payload for " + chunk.normalized() + " lacks '" + std::string(key) +
                        "' array");
    }
    for (const auto& row : j[key]) {
      std::string t = row.value("t", "");
      std::string v = row.value("v", "");
      if (t.empty()) {
        throw parse_error("record without timestamp in " + chunk.normalized() + ": " +
                          row.dump());
      }
      if (v.empty()) continue;  // flagged gap
      UtcTime ts;
      double val;
      try {
        ts = parse_utc(t);
        val = std::stod(v);
      } catch (const std::exception& e) {
        throw parse_error("bad record in " + chunk.normalized() + ": " + row.dump() + ": " +
                          e.what());
      }
      if (std::abs(val) > 15.0) {
        throw parse_error("implausible water level " + v + " m in " + chunk.normalized() +
                          " (units mismatch?)");
      }
      out.emplace_back(ts, val);
    }
  }

  HttpTransport& transport_;
  CacheStore cache_;
  NoaaClientOptions opts_;
};

}  // namespace surge
