#include "advkit/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "container assumes little-endian host");

namespace advkit::harness {

using json = nlohmann::ordered_json;

namespace {

constexpr uint16_t kVersion = 1;

}  // namespace

void write_container(const EpochSet& set, const std::string& path) {
    set.validate();
    const int64_t n = set.n(), c = set.channels(), t = set.samples();
    for (int32_t l : set.labels)
        if (l < -1 || l > 32767)
            throw std::invalid_argument("label does not fit the container's i16 field");
    for (int32_t s : set.subjects)
        if (s < 0 || s > 65535)
            throw std::invalid_argument("subject id does not fit the container's u16 field");

    json header;
    header["fs"] = set.fs;
    header["n_epochs"] = n;
    header["n_channels"] = c;
    header["n_samples"] = t;
    header["class_names"] = set.class_names;
    header["channel_names"] = set.channel_names;
    header["provenance"] = set.provenance;
    const std::string htxt = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("EEGB", 4);
    const uint16_t version = kVersion;
    os.write(reinterpret_cast<const char*>(&version), 2);
    const uint32_t hlen = static_cast<uint32_t>(htxt.size());
    os.write(reinterpret_cast<const char*>(&hlen), 4);
    os.write(htxt.data(), std::streamsize(htxt.size()));
    os.write(reinterpret_cast<const char*>(set.data.ptr()), std::streamsize(4 * n * c * t));
    for (int32_t l : set.labels) {
        const int16_t v = static_cast<int16_t>(l);
        os.write(reinterpret_cast<const char*>(&v), 2);
    }
    for (int32_t s : set.subjects) {
        const uint16_t v = static_cast<uint16_t>(s);
        os.write(reinterpret_cast<const char*>(&v), 2);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

EpochSet read_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot open: " + path);
    const int64_t file_size = is.tellg();
    is.seekg(0);

    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EEGB", 4) != 0)
        throw std::runtime_error("bad magic in epoch container: " + path);
    uint16_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 2);
    if (version != kVersion)
        throw std::runtime_error("unsupported container version " + std::to_string(version));
    uint32_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), 4);
    std::string htxt(hlen, '\0');
    is.read(htxt.data(), hlen);
    if (!is) throw std::runtime_error("truncated container header: " + path);

    json header;
    try {
        header = json::parse(htxt);
    } catch (const json::exception& e) {
        throw std::runtime_error("invalid container header JSON: " + std::string(e.what()));
    }
    const int64_t n = header.at("n_epochs").get<int64_t>();
    const int64_t c = header.at("n_channels").get<int64_t>();
    const int64_t t = header.at("n_samples").get<int64_t>();
    if (n < 0 || c < 1 || t < 1) throw std::runtime_error("invalid container dimensions");

    const int64_t needed = 4 * n * c * t + 2 * n + 2 * n;
    const int64_t have = file_size - (4 + 2 + 4 + int64_t(hlen));
    if (have != needed) {
        const int64_t per_epoch = 4 * c * t + 4;
        if (have % per_epoch == 0 && have / per_epoch != n)
            throw std::runtime_error("container epoch count mismatch: header claims " +
                                     std::to_string(n) + " epochs, payload holds " +
                                     std::to_string(have / per_epoch));
        throw std::runtime_error("truncated container payload: " + path);
    }

    EpochSet set;
    set.fs = header.at("fs").get<float>();
    set.class_names = header.at("class_names").get<std::vector<std::string>>();
    set.channel_names = header.at("channel_names").get<std::vector<std::string>>();
    set.provenance = header.at("provenance").get<std::string>();
    set.data = diff::Tensor({n, c, t});
    is.read(reinterpret_cast<char*>(set.data.ptr()), std::streamsize(4 * n * c * t));
    set.labels.resize(size_t(n));
    for (int64_t i = 0; i < n; ++i) {
        int16_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 2);
        set.labels[size_t(i)] = v;
    }
    set.subjects.resize(size_t(n));
    for (int64_t i = 0; i < n; ++i) {
        uint16_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 2);
        set.subjects[size_t(i)] = v;
    }
    if (!is) throw std::runtime_error("truncated container payload: " + path);
    set.validate();
    return set;
}

}  // namespace advkit::harness
