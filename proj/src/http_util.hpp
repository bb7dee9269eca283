// SPDX-License-Identifier: Apache-2.0
#pragma once

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "magda/error.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <thread>

namespace magda::detail {

struct Endpoint
{
    std::string origin; // scheme://host[:port]
    std::string prefix; // path prefix without trailing slash, may be empty
};

inline Endpoint parse_endpoint(const std::string& url)
{
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ValidationError("endpoint URL needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.origin = url.substr(0, path_start);
    if (path_start != std::string::npos)
    {
        ep.prefix = url.substr(path_start);
        while (!ep.prefix.empty() && ep.prefix.back() == '/')
            ep.prefix.pop_back();
    }
    return ep;
}

inline std::unique_ptr<httplib::Client> make_client(const Endpoint& ep, double timeout_s)
{
    auto client = std::make_unique<httplib::Client>(ep.origin);
    auto secs = static_cast<time_t>(timeout_s);
    auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    client->set_connection_timeout(secs, usecs);
    client->set_read_timeout(secs, usecs);
    client->set_write_timeout(secs, usecs);
    return client;
}

/// Maps an httplib transport error to the engine's error types.
[[noreturn]] inline void throw_transport(httplib::Error err, const std::string& what)
{
    auto msg = what + ": " + httplib::to_string(err);
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
        throw Timeout(msg);
    throw BackendError(msg);
}

/// Runs `attempt` up to max_attempts times, sleeping base * 2^(k-1) between
/// attempts. Only BackendError (and subclasses) are retried.
template <typename Fn>
auto with_retries(int max_attempts, std::chrono::milliseconds base, Fn&& attempt) -> decltype(attempt())
{
    for (int k = 1;; ++k)
    {
        try
        {
            return attempt();
        }
        catch (BackendError& e)
        {
            if (k >= max_attempts)
            {
                e.set_attempts(k);
                throw;
            }
            std::this_thread::sleep_for(base * (1 << (k - 1)));
        }
    }
}

} // namespace magda::detail
