#pragma once

// Live transport for the tides-and-currents API. Kept out of noaa.hpp so
// only network-facing translation units pay for httplib + OpenSSL.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "surge/noaa.hpp"

namespace surge {

class SslTransport : public HttpTransport {
public:
  explicit SslTransport(std::string host = "api.tidesandcurrents.noaa.gov",
                        int timeout_s = 20)
      : host_(std::move(host)), timeout_s_(timeout_s) {}

  HttpResponse get(const std::string& path_query) override {
    httplib::SSLClient client(host_);
    client.set_connection_timeout(timeout_s_);
    client.set_read_timeout(timeout_s_);
    client.enable_server_certificate_verification(true);
    auto res = client.Get(path_query.c_str());
    if (!res) {
      throw transport_error("connection to " + host_ + " failed: " +
                            httplib::to_string(res.error()));
    }
    return HttpResponse{res->status, res->body};
  }

private:
  std::string host_;
  int timeout_s_;
};

// True when the live API answers a trivial request; used to auto-skip
// online-only tests in offline environments.
inline bool online_api_reachable() {
  try {
    SslTransport t("api.tidesandcurrents.noaa.gov", 5);
    HttpResponse r = t.get("/api/prod/datagetter?begin_date=20220926%2000:00&end_date=20220926%2001:00&station=8726520&product=hourly_height&datum=MSL&units=metric&time_zone=gmt&format=json");
    return r.status == 200;
  } catch (...) {
    return false;
  }
}

}  // namespace surge
