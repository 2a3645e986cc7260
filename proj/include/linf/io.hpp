#pragma once

// CSV / text dataset I/O. All floating-point fields are written with 17
// significant digits so round-trips are lossless for doubles.

#include <Eigen/Geometry>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "metrics.hpp"

namespace linf::io {

namespace detail {

inline std::ofstream open_out(const std::string &path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << std::setprecision(17);
    return f;
}

inline std::ifstream open_in(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path);
    return f;
}

inline std::vector<std::string> split(const std::string &line, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, sep)) out.push_back(tok);
    return out;
}

inline double to_double(const std::string &s, const std::string &path) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw IoError("");
        return v;
    } catch (...) {
        throw IoError("bad numeric field '" + s + "' in " + path);
    }
}

inline int64_t to_id(const std::string &s, const std::string &path) {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw IoError("");
        return v;
    } catch (...) {
        throw IoError("bad integer field '" + s + "' in " + path);
    }
}

}  // namespace detail

// ---- tracks: CSV `track_id,frame_id,u_x,u_y` --------------------------------

inline void write_tracks(const std::string &path, const std::vector<FeatureTrack> &tracks) {
    auto f = detail::open_out(path);
    f << "track_id,frame_id,u_x,u_y\n";
    for (const auto &tr : tracks) {
        for (const auto &o : tr.observations) {
            f << tr.track_id << ',' << o.frame_id << ',' << o.u.x() << ',' << o.u.y() << '\n';
        }
    }
}

inline std::vector<FeatureTrack> read_tracks(const std::string &path) {
    auto f = detail::open_in(path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("track_id", 0) != 0) {
        throw IoError("missing tracks header in " + path);
    }
    std::map<int64_t, FeatureTrack> by_id;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cols = detail::split(line, ',');
        if (cols.size() != 4) throw IoError("expected 4 columns in " + path);
        const int64_t tid = detail::to_id(cols[0], path);
        auto &tr = by_id[tid];
        tr.track_id = tid;
        tr.add(detail::to_id(cols[1], path), Vec2(detail::to_double(cols[2], path), detail::to_double(cols[3], path)));
    }
    std::vector<FeatureTrack> out;
    out.reserve(by_id.size());
    for (auto &[tid, tr] : by_id) out.push_back(std::move(tr));
    return out;
}

// ---- poses: per-line `frame_id qw qx qy qz tx ty tz` ------------------------

inline void write_poses(const std::string &path, const std::map<int64_t, KeyframePose> &poses) {
    auto f = detail::open_out(path);
    for (const auto &[fid, p] : poses) {
        Eigen::Quaterniond q(p.r.matrix());
        if (q.w() < 0.0) q.coeffs() = -q.coeffs();
        f << fid << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << p.t.x() << ' '
          << p.t.y() << ' ' << p.t.z() << '\n';
    }
}

inline std::map<int64_t, KeyframePose> read_poses(const std::string &path) {
    auto f = detail::open_in(path);
    std::map<int64_t, KeyframePose> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        int64_t fid;
        double qw, qx, qy, qz, tx, ty, tz;
        if (!(ss >> fid >> qw >> qx >> qy >> qz >> tx >> ty >> tz)) {
            throw IoError("bad pose line in " + path);
        }
        Eigen::Quaterniond q(qw, qx, qy, qz);
        if (std::abs(q.norm() - 1.0) > 1e-9) throw IoError("non-unit quaternion in " + path);
        q.normalize();
        out.emplace(fid, KeyframePose(Rotation(q.toRotationMatrix()), Vec3(tx, ty, tz)));
    }
    return out;
}

// ---- loop events: CSV `at_frame,matched_frame` ------------------------------

inline void write_loops(const std::string &path, const std::vector<std::pair<int64_t, int64_t>> &loops) {
    auto f = detail::open_out(path);
    f << "at_frame,matched_frame\n";
    for (const auto &[at, matched] : loops) f << at << ',' << matched << '\n';
}

inline std::vector<std::pair<int64_t, int64_t>> read_loops(const std::string &path) {
    auto f = detail::open_in(path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("at_frame", 0) != 0) {
        throw IoError("missing loops header in " + path);
    }
    std::vector<std::pair<int64_t, int64_t>> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cols = detail::split(line, ',');
        if (cols.size() != 2) throw IoError("expected 2 columns in " + path);
        out.emplace_back(detail::to_id(cols[0], path), detail::to_id(cols[1], path));
    }
    return out;
}

// ---- map points: CSV `track_id,x,y,z` ---------------------------------------

inline void write_points(const std::string &path, const std::map<int64_t, Vec3> &points) {
    auto f = detail::open_out(path);
    f << "track_id,x,y,z\n";
    for (const auto &[tid, x] : points) f << tid << ',' << x.x() << ',' << x.y() << ',' << x.z() << '\n';
}

inline std::map<int64_t, Vec3> read_points(const std::string &path) {
    auto f = detail::open_in(path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("track_id", 0) != 0) {
        throw IoError("missing points header in " + path);
    }
    std::map<int64_t, Vec3> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cols = detail::split(line, ',');
        if (cols.size() != 4) throw IoError("expected 4 columns in " + path);
        out.emplace(detail::to_id(cols[0], path),
                    Vec3(detail::to_double(cols[1], path), detail::to_double(cols[2], path),
                         detail::to_double(cols[3], path)));
    }
    return out;
}

// ---- metrics: CSV `frame_id,pos_err,rot_err_deg` + summary footer rows ------

inline void write_metrics(const std::string &path, const Metrics &m) {
    auto f = detail::open_out(path);
    f << "frame_id,pos_err,rot_err_deg\n";
    for (size_t i = 0; i < m.frame_ids.size(); ++i) {
        f << m.frame_ids[i] << ',' << m.pos_err[i] << ',' << m.rot_err_deg[i] << '\n';
    }
    f << "max," << m.max_pos << ',' << m.max_rot << '\n';
    f << "rmse," << m.rmse_pos << ',' << m.rmse_rot << '\n';
}

}  // namespace linf::io
