#pragma once

#include <optional>
#include <string>
#include <vector>

#include "minidetr/box.hpp"
#include "minidetr/image.hpp"

namespace minidetr {

struct GroundTruth {
    int image_id = 0;
    int class_id = 0;
    Box box;
};

struct Detection {
    int image_id = 0;
    int class_id = 0;
    double score = 0.0;
    Box box;
    int query_id = -1;  // -1 = absent
};

struct AnnotatedSample {
    Image image;
    int image_id = 0;
    std::vector<GroundTruth> gts;
};

struct DatasetManifest {
    std::string name;
    int sample_count = 0;
    std::vector<std::string> class_names;  // dense ids [0, C)
    std::string source;                    // "coco-json" or "synthetic"
    unsigned long long seed = 0;           // synthetic only
};

struct Dataset {
    std::vector<AnnotatedSample> samples;
    DatasetManifest manifest;
};

// COCO-subset annotation JSON (images/annotations/categories); bboxes are
// pixel (x,y,w,h) and come out normalized (cx,cy,w,h); category ids remapped
// densely in ascending original-id order.
Dataset load_coco_annotations(const std::string& annotation_file, const std::string& image_dir);

// Seeded shapes dataset: 1..max_objects of {rectangle=0, circle=1, triangle=2}
// per image on a dark background, tight ground-truth boxes.
Dataset generate_synthetic_shapes(int n, int max_objects, int image_size, unsigned long long seed);

// Detections interchange JSON: a list of
//   {image_id, class_id, score, bbox [cx,cy,w,h], query_id?}
std::vector<Detection> import_external_detections(const std::string& path);
void export_detections(const std::vector<Detection>& dets, const std::string& path);

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& json_text);

}  // namespace minidetr
