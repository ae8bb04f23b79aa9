# calibrate package
